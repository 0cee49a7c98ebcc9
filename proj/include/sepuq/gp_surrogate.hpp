#ifndef SEPUQ_GP_SURROGATE_HPP
#define SEPUQ_GP_SURROGATE_HPP

#include <cstddef>
#include <memory>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "sepuq/theta_grid.hpp"

namespace sepuq::gp {

// K(s, t) = sigma_a^2 exp(-(s - t)^2 / (2 length^2)); targets carry N(0, sigma_1^2) noise.
struct GPHyper
{
    double sigma_a = 1.0;
    double sigma_1 = 1e-3;
    double length = 1.0;
};

struct Prediction
{
    double mean = 0.0;
    double variance = 0.0;
};

// Cholesky factor of K_n + sigma_1^2 I for one set of training inputs.
// All parametric modes tabulated on the same grid share one of these.
class KernelFactor
{
public:
    KernelFactor(Eigen::VectorXd inputs, const GPHyper& hyper);

    const Eigen::VectorXd& inputs() const noexcept { return inputs_; }
    const GPHyper& hyper() const noexcept { return hyper_; }

    double kernel(double s, double t) const noexcept;
    Eigen::VectorXd cross_covariance(double x) const;
    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
    // K_* - K_*n (K_n + sigma_1^2 I)^{-1} K_*n' + sigma_1^2; the same for every target vector.
    double predictive_variance(double x) const;
    // Same, from a precomputed cross_covariance(x).
    double predictive_variance(const Eigen::VectorXd& cross) const;

private:
    Eigen::VectorXd inputs_;
    GPHyper hyper_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

class GPModel
{
public:
    GPModel(std::shared_ptr<const KernelFactor> factor, Eigen::VectorXd targets);

    Prediction predict(double x) const;
    const Eigen::VectorXd& targets() const noexcept { return targets_; }
    // (K_n + sigma_1^2 I)^{-1} z
    const Eigen::VectorXd& weights() const noexcept { return weights_; }
    const KernelFactor& factor() const noexcept { return *factor_; }

private:
    std::shared_ptr<const KernelFactor> factor_;
    Eigen::VectorXd targets_;
    Eigen::VectorXd weights_;
};

GPModel fit(const ThetaGrid& grid, const Eigen::VectorXd& z, const GPHyper& hyper);

// One GP per (term i, parameter j) over a shared grid. Batch prediction for a
// fixed j evaluates the cross-covariance and the variance once for all i.
class GPBank
{
public:
    // tables[i] is the N2 x n_grid matrix of a_{i,j}(alpha_q).
    GPBank(const ThetaGrid& grid, const std::vector<Eigen::MatrixXd>& tables, const GPHyper& hyper);

    std::size_t num_terms() const noexcept { return num_terms_; }
    std::size_t num_params() const noexcept { return num_params_; }
    const KernelFactor& factor() const noexcept { return *factor_; }
    const GPHyper& hyper() const noexcept { return factor_->hyper(); }

    GPModel model(std::size_t i, std::size_t j) const;
    Prediction predict(std::size_t i, std::size_t j, double theta) const;
    // means[i] = E a_{i,j}(theta); returns the common predictive variance.
    double predict_column(std::size_t j, double theta, Eigen::Ref<Eigen::VectorXd> means) const;

private:
    std::shared_ptr<const KernelFactor> factor_;
    std::size_t num_terms_;
    std::size_t num_params_;
    std::vector<Eigen::MatrixXd> tables_;  // per i: N2 x n_grid
    std::vector<Eigen::MatrixXd> weights_; // per j: N1 x n_grid
};

} // namespace sepuq::gp

#endif
