#ifndef SEPUQ_KLE_FIELD_HPP
#define SEPUQ_KLE_FIELD_HPP

#include <cstddef>
#include <random>

#include <Eigen/Core>

#include "sepuq/mesh_fem.hpp"

namespace sepuq::kle {

// Squared-exponential covariance of log-permeability,
// C(x, y) = sigma_gf^2 exp(-|x - y|^2 / (2 l0^2)).
struct CovarianceSpec
{
    double sigma_gf = 0.2;
    double l0 = 0.1;

    double operator()(const fem::Point& a, const fem::Point& b) const;
};

// Truncated discrete Karhunen-Loeve basis on the mesh nodes.
struct KLBasis
{
    Eigen::VectorXd eigenvalues; // descending
    Eigen::MatrixXd eigenfields; // nodes x N2, orthonormal under diag(weights)
    Eigen::MatrixXd modes;       // nodes x N2, sqrt(lambda_k) * Phi_k
    Eigen::VectorXd weights;     // lumped nodal quadrature weights
    double total_variance = 0.0; // full discrete trace, sum_n w_n C(x_n, x_n)

    std::size_t size() const noexcept { return static_cast<std::size_t>(modes.cols()); }
    std::size_t num_nodes() const noexcept { return static_cast<std::size_t>(modes.rows()); }

    // Basis from externally supplied scaled modes (eigen data left empty).
    static KLBasis from_modes(Eigen::MatrixXd modes);
};

// Solves W^{1/2} R W^{1/2} psi = lambda psi and keeps the leading n_modes pairs.
// Each eigenfield's largest-magnitude nodal entry is made positive.
KLBasis build_kl_basis(const fem::GridMesh& mesh, const CovarianceSpec& cov, std::size_t n_modes);

// e(N) = sum_{k<=N} lambda_k / total_variance
double energy_ratio(const KLBasis& basis, std::size_t n);

fem::Field log_kappa(const KLBasis& basis, const Eigen::VectorXd& theta);
fem::Field kappa(const KLBasis& basis, const Eigen::VectorXd& theta);

// i.i.d. standard normal coefficients.
Eigen::VectorXd sample_theta(std::mt19937_64& rng, std::size_t n);

} // namespace sepuq::kle

#endif
