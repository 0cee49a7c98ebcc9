#ifndef SEPUQ_VB_INVERSION_HPP
#define SEPUQ_VB_INVERSION_HPP

#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sepuq/gp_surrogate.hpp"
#include "sepuq/kle_field.hpp"
#include "sepuq/mesh_fem.hpp"
#include "sepuq/observations.hpp"
#include "sepuq/theta_grid.hpp"

/**
 * Grouped mean-field variational Bayes for the separable observation model
 *
 *     y = sum_i ( prod_j a_{i,j} ) V_i + eps,   eps ~ N(0, sigma_y^2 I)
 *     a_{i,j} | theta_j ~ N(mu_{i,j}(theta_j), s_{i,j}^2(theta_j))   (GP predictive)
 *     theta_j ~ N(theta0, sigma0^2)
 *
 * with one factor per group G_k = {theta_k, a_{1,k}, ..., a_{N1,k}}. Given the
 * other groups, log q(G_k) is quadratic in the a-vector:
 *
 *     -a' Sigma(theta_k) a + beta(theta_k)' a + (terms in theta_k only)
 *
 * so at fixed theta_k the a-vector is Gaussian with precision 2 Sigma and mean
 * Sigma^{-1} beta / 2. Integrating it out gives the theta_k marginal; each
 * a_{p,k} marginal follows from the same Gaussian. Both are integrated with the
 * trapezoid rule, theta_k on a uniform grid and a_{p,k} on a window around the
 * conditional mean.
 */

namespace sepuq::vb {

struct VBConfig
{
    double theta_min = -5.0;
    double theta_max = 5.0;
    int theta_intervals = 50;
    double a_window = 5.0; // half-width in conditional standard deviations
    int a_intervals = 50;
    double tol_theta = 1e-10; // on sum_j (change of E theta_j)^2
    double tol_a = 1e-10;     // on sum_{i,j} (change of E a_{i,j})^2
    int max_iters = 100;
    ThetaPrior prior = {};
};

// E R_m, E R_m^2 and E R_m R_n with R_m = prod_{j != k} a_{m,j}.
struct RMoments
{
    Eigen::VectorXd mean;  // E R_m
    Eigen::MatrixXd cross; // (m, n) -> E R_m R_n; diagonal E R_m^2
};

struct VBState
{
    Eigen::VectorXd theta_mean; // N2
    Eigen::VectorXd theta_var;  // N2
    Eigen::MatrixXd a_mean;     // N1 x N2
    Eigen::MatrixXd a_var;      // N1 x N2

    std::size_t num_terms() const noexcept { return static_cast<std::size_t>(a_mean.rows()); }
    std::size_t num_params() const noexcept { return static_cast<std::size_t>(theta_mean.size()); }
};

// theta = theta0, a-moments from the GP at theta0.
VBState initial_state(const gp::GPBank& gps, const ThetaPrior& prior);

RMoments compute_R_moments(const VBState& state, std::size_t k);

struct SigmaBeta
{
    Eigen::MatrixXd sigma; // N1 x N1
    Eigen::VectorXd beta;  // N1
};

// gp_mean[m], gp_var[m]: predictive moments of a_{m,k}(theta_k).
SigmaBeta sigma_beta(const RMoments& moments, const ObservationSet& obs, const Eigen::VectorXd& gp_mean,
                     const Eigen::VectorXd& gp_var);

// log q*(theta_k) up to an additive constant; throws on a non-PD Sigma or a non-finite value.
double log_q_theta(double theta, const RMoments& moments, const ObservationSet& obs, const gp::GPBank& gps,
                   std::size_t k, const ThetaPrior& prior);

// Everything the group update needs, tabulated on the theta grid.
struct GroupPosterior
{
    std::size_t k = 0;
    ThetaGrid grid;
    Eigen::VectorXd log_q;     // log q*(theta) at each grid point, max-subtracted
    Eigen::MatrixXd cond_mean; // N1 x n_theta, E[a_{p,k} | theta]
    Eigen::MatrixXd cond_var;  // N1 x n_theta, Var[a_{p,k} | theta]
};

GroupPosterior group_posterior(const VBState& state, const gp::GPBank& gps, const ObservationSet& obs,
                               const VBConfig& config, std::size_t k);

struct Moments
{
    double mean = 0.0;
    double var = 0.0;
};

// Trapezoid moments of q*(theta_k); writes them into state.
Moments update_theta(VBState& state, const GroupPosterior& group);
// Iterated trapezoid moments of q*(theta_k, a_{p,k}); writes them into state.
Moments update_a(VBState& state, const GroupPosterior& group, std::size_t p, const VBConfig& config);

struct VBHistory
{
    std::vector<double> delta_mu;    // ||E mu_new - E mu_old||_2 per iteration
    std::vector<double> delta_theta; // squared-sum measure used for stopping
    std::vector<double> delta_a;
    std::vector<Eigen::VectorXd> theta_trace; // E mu after each iteration
    int iterations = 0;
    bool converged = false;
};

struct VBResult
{
    VBState state;
    VBHistory history;
};

// One pass over all groups in ascending j (ascending i inside each group).
void sweep(VBState& state, const gp::GPBank& gps, const ObservationSet& obs, const VBConfig& config);

VBResult run_vb(const gp::GPBank& gps, const ObservationSet& obs, const VBConfig& config);

// E ln kappa = sum_k E theta_k phi_k, Var ln kappa = sum_k Var theta_k phi_k^2.
std::pair<fem::Field, fem::Field> posterior_log_kappa(const VBState& state, const kle::KLBasis& basis);

} // namespace sepuq::vb

#endif
