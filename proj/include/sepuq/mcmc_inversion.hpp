#ifndef SEPUQ_MCMC_INVERSION_HPP
#define SEPUQ_MCMC_INVERSION_HPP

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sepuq/gp_surrogate.hpp"
#include "sepuq/kle_field.hpp"
#include "sepuq/observations.hpp"

/**
 * Metropolis-within-Gibbs over (theta, a) for
 *
 *     log p = -||y - sum_i (prod_j a_{i,j}) V_i||^2 / (2 sigma_y^2)
 *             - sum_{i,j} [ (a_{i,j} - mu_{i,j}(theta_j))^2 / (2 s_j^2(theta_j)) + log s_j(theta_j) ]
 *             - sum_j (theta_j - theta0)^2 / (2 sigma0^2)
 *
 * with theta restricted to [theta_min, theta_max]. A theta_j move shifts the
 * whole column a_{.,j} by mu_{.,j}(theta') - mu_{.,j}(theta); the map has unit
 * Jacobian and the step is symmetric, so the plain posterior ratio is the
 * acceptance ratio. Without the shift a theta move would have to stay inside
 * the GP noise band (sigma_1 ~ 1e-3) and the chain would barely mix.
 *
 * The sweep never evaluates the full residual: it keeps c = V'(y - V P) and
 * the Gram matrix V'V, so single-entry and column moves cost O(N1) and O(N1^2).
 */

namespace sepuq::mcmc {

struct McmcConfig
{
    std::size_t iterations = 100000; // sweeps, burn-in included
    std::size_t burn_in = 10000;
    std::size_t thinning = 10;
    double theta_step = 0.05;
    double a_step = 0.02; // times sigma_a
    std::size_t adapt_every = 100;
    double target_low = 0.25;
    double target_high = 0.40;
    std::size_t check_every = 10000;
    double theta_min = -5.0;
    double theta_max = 5.0;
    std::uint64_t seed = 1;
    ThetaPrior prior = {};
};

struct ChainState
{
    Eigen::VectorXd theta;   // N2
    Eigen::MatrixXd a;       // N1 x N2
    Eigen::VectorXd product; // prod_j a_{i,j}
    double log_post = 0.0;
};

// Full recomputation; throws NumericalError on a non-finite value.
double log_posterior(const Eigen::VectorXd& theta, const Eigen::MatrixXd& a, const ObservationSet& obs,
                     const gp::GPBank& gps, const ThetaPrior& prior);

class Chain
{
public:
    // Starts at theta = theta0 with a at the GP means.
    Chain(const gp::GPBank& gps, const ObservationSet& obs, McmcConfig config);

    const ChainState& state() const noexcept { return state_; }
    void set_state(const Eigen::VectorXd& theta, const Eigen::MatrixXd& a);
    const McmcConfig& config() const noexcept { return config_; }

    // One Gibbs sweep: every theta_j, then every a_{i,j}.
    void step(std::mt19937_64& rng);
    // Rescales proposal widths from the acceptance since the last call.
    void adapt();
    // |cached - recomputed| <= 1e-8 (1 + |recomputed|); resynchronizes the cache either way.
    bool check_cache();

    const Eigen::VectorXd& theta_step() const noexcept { return theta_step_; }
    const Eigen::MatrixXd& a_step() const noexcept { return a_step_; }
    Eigen::VectorXd theta_acceptance() const;
    Eigen::MatrixXd a_acceptance() const;
    void reset_counters();

private:
    void refresh();

    const gp::GPBank* gps_;
    const ObservationSet* obs_;
    McmcConfig config_;
    ChainState state_;

    Eigen::MatrixXd gram_;     // V'V / sigma_y^2
    Eigen::VectorXd corr_;     // V'(y - V P) / sigma_y^2
    Eigen::MatrixXd gp_mean_;  // N1 x N2 at the current theta
    Eigen::VectorXd gp_var_;   // N2

    Eigen::VectorXd theta_step_;
    Eigen::MatrixXd a_step_;
    Eigen::VectorXd theta_tried_, theta_taken_;
    Eigen::MatrixXd a_tried_, a_taken_;
    Eigen::VectorXd theta_tried_win_, theta_taken_win_;
    Eigen::MatrixXd a_tried_win_, a_taken_win_;
};

struct McmcResult
{
    Eigen::MatrixXd samples;            // kept draws x N2 (post burn-in, thinned)
    std::vector<std::size_t> trace_sweep;
    std::vector<Eigen::VectorXd> trace; // running posterior mean of theta at each kept draw
    Eigen::VectorXd theta_mean;
    Eigen::VectorXd theta_std;
    Eigen::MatrixXd theta_cov;
    Eigen::VectorXd theta_acceptance;   // post burn-in
    Eigen::MatrixXd a_acceptance;
    std::vector<std::string> warnings;
    double seconds_per_sweep = 0.0;
    ChainState final_state;
};

McmcResult run_chain(const gp::GPBank& gps, const ObservationSet& obs, const McmcConfig& config);

// E ln kappa = Phi E theta, Var ln kappa = diag(Phi Cov(theta) Phi').
std::pair<fem::Field, fem::Field> posterior_log_kappa(const McmcResult& result, const kle::KLBasis& basis);

} // namespace sepuq::mcmc

#endif
