#include "sepuq/kle_field.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include <lapacke.h>

#include "sepuq/errors.hpp"

namespace sepuq::kle {

double CovarianceSpec::operator()(const fem::Point& a, const fem::Point& b) const
{
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return sigma_gf * sigma_gf * std::exp(-(dx * dx + dy * dy) / (2.0 * l0 * l0));
}

KLBasis KLBasis::from_modes(Eigen::MatrixXd modes)
{
    KLBasis b;
    b.eigenvalues = Eigen::VectorXd::Zero(modes.cols());
    b.eigenfields = modes;
    b.weights = Eigen::VectorXd::Zero(modes.rows());
    b.modes = std::move(modes);
    return b;
}

KLBasis build_kl_basis(const fem::GridMesh& mesh, const CovarianceSpec& cov, std::size_t n_modes)
{
    if (!(cov.sigma_gf > 0.0) || !(cov.l0 > 0.0)) throw ValidationError("covariance needs sigma_gf > 0 and l0 > 0");
    const auto n = static_cast<Eigen::Index>(mesh.num_nodes());
    if (n_modes > mesh.num_nodes()) {
        std::ostringstream ss;
        ss << "requested " << n_modes << " KL modes but the mesh has only " << n << " nodes";
        throw ValidationError(ss.str());
    }

    KLBasis basis;
    basis.weights = mesh.lumped_weights();
    const Eigen::VectorXd sqrt_w = basis.weights.cwiseSqrt();

    std::vector<fem::Point> pts(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) pts[static_cast<std::size_t>(i)] = mesh.node(static_cast<std::size_t>(i));

    basis.total_variance = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        basis.total_variance += basis.weights[i] * cov(pts[static_cast<std::size_t>(i)], pts[static_cast<std::size_t>(i)]);
    }

    const auto k = static_cast<Eigen::Index>(n_modes);
    basis.eigenvalues.resize(k);
    basis.eigenfields.resize(n, k);
    basis.modes.resize(n, k);
    if (k == 0) return basis;

    // Only the upper triangle is referenced by LAPACK.
    Eigen::MatrixXd b(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i <= j; ++i) {
            b(i, j) = sqrt_w[i] * cov(pts[static_cast<std::size_t>(i)], pts[static_cast<std::size_t>(j)]) * sqrt_w[j];
        }
    }

    Eigen::VectorXd w(n);
    Eigen::MatrixXd z(n, k);
    std::vector<lapack_int> support(static_cast<std::size_t>(2 * k));
    lapack_int found = 0;
    const auto nn = static_cast<lapack_int>(n);
    const lapack_int info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'U', nn, b.data(), nn, 0.0, 0.0,
                                           nn - static_cast<lapack_int>(k) + 1, nn, 0.0, &found, w.data(),
                                           z.data(), nn, support.data());
    if (info != 0 || found != static_cast<lapack_int>(k)) {
        std::ostringstream ss;
        ss << "symmetric eigensolver failed (info " << info << ", found " << found << " of " << k << ")";
        throw NumericalError(ss.str());
    }

    // LAPACK returns ascending order.
    const double lambda_max = w[k - 1];
    for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::Index src = k - 1 - c;
        double lambda = w[src];
        if (lambda < 0.0) {
            if (lambda < -1e-10 * lambda_max) {
                std::ostringstream ss;
                ss << "covariance is not positive semidefinite on this mesh: eigenvalue " << lambda;
                throw NumericalError(ss.str());
            }
            lambda = 0.0;
        }
        Eigen::VectorXd phi = z.col(src).cwiseQuotient(sqrt_w);
        Eigen::Index imax = 0;
        phi.cwiseAbs().maxCoeff(&imax);
        if (phi[imax] < 0.0) phi = -phi;
        basis.eigenvalues[c] = lambda;
        basis.eigenfields.col(c) = phi;
        basis.modes.col(c) = std::sqrt(lambda) * phi;
    }
    return basis;
}

double energy_ratio(const KLBasis& basis, std::size_t n)
{
    if (n > static_cast<std::size_t>(basis.eigenvalues.size())) {
        throw ValidationError("energy_ratio: more modes requested than were computed");
    }
    if (!(basis.total_variance > 0.0)) throw ValidationError("energy_ratio: basis has no variance");
    return basis.eigenvalues.head(static_cast<Eigen::Index>(n)).sum() / basis.total_variance;
}

fem::Field log_kappa(const KLBasis& basis, const Eigen::VectorXd& theta)
{
    if (static_cast<std::size_t>(theta.size()) != basis.size()) {
        std::ostringstream ss;
        ss << "theta has " << theta.size() << " entries, basis has " << basis.size() << " modes";
        throw ValidationError(ss.str());
    }
    if (!theta.allFinite()) throw ValidationError("theta contains non-finite entries");
    if (theta.size() == 0) return fem::Field::Zero(basis.modes.rows());
    return basis.modes * theta;
}

fem::Field kappa(const KLBasis& basis, const Eigen::VectorXd& theta)
{
    return log_kappa(basis, theta).array().exp().matrix();
}

Eigen::VectorXd sample_theta(std::mt19937_64& rng, std::size_t n)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd theta(static_cast<Eigen::Index>(n));
    for (auto& t : theta) t = normal(rng);
    return theta;
}

} // namespace sepuq::kle
