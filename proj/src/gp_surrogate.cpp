#include "sepuq/gp_surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sepuq/errors.hpp"

namespace sepuq::gp {

KernelFactor::KernelFactor(Eigen::VectorXd inputs, const GPHyper& hyper) : inputs_(std::move(inputs)), hyper_(hyper)
{
    if (!(hyper.sigma_a > 0.0 && hyper.sigma_1 > 0.0 && hyper.length > 0.0)) {
        throw ValidationError("GP hyperparameters must all be positive");
    }
    const auto n = inputs_.size();
    if (n == 0) throw ValidationError("GP needs at least one training input");
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < n; ++c) k(r, c) = kernel(inputs_[r], inputs_[c]);
        k(r, r) += hyper.sigma_1 * hyper.sigma_1;
    }
    llt_.compute(k);
    if (llt_.info() != Eigen::Success) {
        throw NumericalError("GP kernel matrix is not positive definite; check sigma_a, sigma_1, length");
    }
}

double KernelFactor::kernel(double s, double t) const noexcept
{
    const double d = (s - t) / hyper_.length;
    return hyper_.sigma_a * hyper_.sigma_a * std::exp(-0.5 * d * d);
}

Eigen::VectorXd KernelFactor::cross_covariance(double x) const
{
    Eigen::VectorXd k(inputs_.size());
    for (Eigen::Index q = 0; q < inputs_.size(); ++q) k[q] = kernel(x, inputs_[q]);
    return k;
}

Eigen::VectorXd KernelFactor::solve(const Eigen::VectorXd& rhs) const { return llt_.solve(rhs); }

double KernelFactor::predictive_variance(double x) const { return predictive_variance(cross_covariance(x)); }

double KernelFactor::predictive_variance(const Eigen::VectorXd& cross) const
{
    Eigen::VectorXd k = cross;
    llt_.matrixL().solveInPlace(k);
    const double latent = std::max(hyper_.sigma_a * hyper_.sigma_a - k.squaredNorm(), 0.0);
    return latent + hyper_.sigma_1 * hyper_.sigma_1;
}

GPModel::GPModel(std::shared_ptr<const KernelFactor> factor, Eigen::VectorXd targets)
    : factor_(std::move(factor)), targets_(std::move(targets))
{
    if (targets_.size() != factor_->inputs().size()) {
        std::ostringstream ss;
        ss << "GP fit: " << targets_.size() << " targets for " << factor_->inputs().size() << " inputs";
        throw ValidationError(ss.str());
    }
    weights_ = factor_->solve(targets_);
}

Prediction GPModel::predict(double x) const
{
    return {factor_->cross_covariance(x).dot(weights_), factor_->predictive_variance(x)};
}

GPModel fit(const ThetaGrid& grid, const Eigen::VectorXd& z, const GPHyper& hyper)
{
    return GPModel(std::make_shared<const KernelFactor>(grid.points, hyper), z);
}

GPBank::GPBank(const ThetaGrid& grid, const std::vector<Eigen::MatrixXd>& tables, const GPHyper& hyper)
    : factor_(std::make_shared<const KernelFactor>(grid.points, hyper)),
      num_terms_(tables.size()),
      num_params_(tables.empty() ? 0 : static_cast<std::size_t>(tables.front().rows())),
      tables_(tables)
{
    const auto n1 = static_cast<Eigen::Index>(num_terms_);
    const auto ng = grid.points.size();
    weights_.assign(num_params_, Eigen::MatrixXd(n1, ng));
    for (Eigen::Index i = 0; i < n1; ++i) {
        const auto& t = tables[static_cast<std::size_t>(i)];
        if (static_cast<std::size_t>(t.rows()) != num_params_ || t.cols() != ng) {
            throw ValidationError("GP bank: parametric tables have inconsistent shapes");
        }
        for (std::size_t j = 0; j < num_params_; ++j) {
            weights_[j].row(i) = factor_->solve(t.row(static_cast<Eigen::Index>(j)).transpose()).transpose();
        }
    }
}

GPModel GPBank::model(std::size_t i, std::size_t j) const
{
    return GPModel(factor_, tables_.at(i).row(static_cast<Eigen::Index>(j)).transpose());
}

Prediction GPBank::predict(std::size_t i, std::size_t j, double theta) const
{
    const Eigen::VectorXd k = factor_->cross_covariance(theta);
    return {weights_.at(j).row(static_cast<Eigen::Index>(i)).dot(k), factor_->predictive_variance(theta)};
}

double GPBank::predict_column(std::size_t j, double theta, Eigen::Ref<Eigen::VectorXd> means) const
{
    const Eigen::VectorXd k = factor_->cross_covariance(theta);
    means.noalias() = weights_.at(j) * k;
    return factor_->predictive_variance(k);
}

} // namespace sepuq::gp
