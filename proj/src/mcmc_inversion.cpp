#include "sepuq/mcmc_inversion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "sepuq/errors.hpp"

namespace sepuq::mcmc {

namespace {

void check_config(const McmcConfig& c)
{
    if (c.iterations == 0 || c.burn_in >= c.iterations) throw ValidationError("MCMC needs burn_in < iterations");
    if (c.thinning == 0 || c.adapt_every == 0 || c.check_every == 0) {
        throw ValidationError("MCMC thinning, adaptation and check intervals must be positive");
    }
    if (!(c.theta_step > 0.0) || !(c.a_step > 0.0)) throw ValidationError("MCMC proposal widths must be positive");
    if (!(c.theta_max > c.theta_min)) throw ValidationError("MCMC theta range is empty");
    if (!(c.target_low > 0.0 && c.target_low < c.target_high && c.target_high < 1.0)) {
        throw ValidationError("MCMC acceptance target band must satisfy 0 < low < high < 1");
    }
    if (!(c.prior.sigma0 > 0.0)) throw ValidationError("theta prior std must be positive");
}

double theta_prior_term(double theta, const ThetaPrior& prior)
{
    const double d = theta - prior.theta0;
    return -d * d / (2.0 * prior.sigma0 * prior.sigma0);
}

bool accept_log_ratio(double delta, std::mt19937_64& rng)
{
    if (delta >= 0.0) return true;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return std::log(u(rng)) < delta;
}

double a_prior_term(double a, double mean, double var)
{
    const double d = a - mean;
    return -d * d / (2.0 * var);
}

double step_factor(double rate, double low, double high)
{
    if (rate < low) return std::max(0.1, rate / low);
    if (rate > high) return std::min(2.5, rate / high);
    return 1.0;
}

} // namespace

double log_posterior(const Eigen::VectorXd& theta, const Eigen::MatrixXd& a, const ObservationSet& obs,
                     const gp::GPBank& gps, const ThetaPrior& prior)
{
    const auto n1 = a.rows();
    const auto n2 = a.cols();
    if (theta.size() != n2 || static_cast<std::size_t>(n1) != gps.num_terms() ||
        static_cast<std::size_t>(n2) != gps.num_params() || obs.modes.cols() != n1) {
        throw ValidationError("log_posterior: dimensions of theta, a, GP bank and observations disagree");
    }
    const Eigen::VectorXd product = a.rowwise().prod();
    const Eigen::VectorXd r = obs.values - obs.modes * product;
    double lp = -r.squaredNorm() / (2.0 * obs.sigma_y * obs.sigma_y);
    Eigen::VectorXd mu(n1);
    for (Eigen::Index j = 0; j < n2; ++j) {
        const double v = gps.predict_column(static_cast<std::size_t>(j), theta[j], mu);
        lp += -(a.col(j) - mu).squaredNorm() / (2.0 * v) - 0.5 * static_cast<double>(n1) * std::log(v);
        lp += theta_prior_term(theta[j], prior);
    }
    if (!std::isfinite(lp)) throw NumericalError("log posterior is not finite");
    return lp;
}

Chain::Chain(const gp::GPBank& gps, const ObservationSet& obs, McmcConfig config)
    : gps_(&gps), obs_(&obs), config_(config)
{
    check_config(config_);
    if (obs.num_terms() != gps.num_terms()) {
        throw ValidationError("observation modes and GP bank disagree on the number of terms");
    }
    const auto n1 = static_cast<Eigen::Index>(gps.num_terms());
    const auto n2 = static_cast<Eigen::Index>(gps.num_params());
    const double s2 = obs.sigma_y * obs.sigma_y;
    gram_ = obs.modes.transpose() * obs.modes / s2;

    Eigen::VectorXd theta = Eigen::VectorXd::Constant(n2, config_.prior.theta0);
    Eigen::MatrixXd a(n1, n2);
    Eigen::VectorXd mu(n1);
    for (Eigen::Index j = 0; j < n2; ++j) {
        gps.predict_column(static_cast<std::size_t>(j), theta[j], mu);
        a.col(j) = mu;
    }
    theta_step_ = Eigen::VectorXd::Constant(n2, config_.theta_step);
    a_step_ = Eigen::MatrixXd::Constant(n1, n2, config_.a_step * gps.hyper().sigma_a);
    reset_counters();
    set_state(theta, a);
}

void Chain::set_state(const Eigen::VectorXd& theta, const Eigen::MatrixXd& a)
{
    if (theta.size() != static_cast<Eigen::Index>(gps_->num_params()) || a.rows() != gram_.rows() ||
        a.cols() != theta.size()) {
        throw ValidationError("chain state has the wrong shape");
    }
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
        if (!(theta[j] >= config_.theta_min && theta[j] <= config_.theta_max)) {
            throw ValidationError("chain theta lies outside the sampling range");
        }
    }
    state_.theta = theta;
    state_.a = a;
    refresh();
}

void Chain::refresh()
{
    const auto n1 = state_.a.rows();
    const auto n2 = state_.a.cols();
    const double s2 = obs_->sigma_y * obs_->sigma_y;
    state_.product = state_.a.rowwise().prod();
    const Eigen::VectorXd r = obs_->values - obs_->modes * state_.product;
    corr_ = obs_->modes.transpose() * r / s2;
    gp_mean_.resize(n1, n2);
    gp_var_.resize(n2);
    Eigen::VectorXd mu(n1);
    for (Eigen::Index j = 0; j < n2; ++j) {
        gp_var_[j] = gps_->predict_column(static_cast<std::size_t>(j), state_.theta[j], mu);
        gp_mean_.col(j) = mu;
    }
    state_.log_post = log_posterior(state_.theta, state_.a, *obs_, *gps_, config_.prior);
}

void Chain::step(std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto n1 = state_.a.rows();
    const auto n2 = state_.a.cols();
    auto& a = state_.a;
    Eigen::VectorXd others(n1);
    Eigen::VectorXd mu_new(n1);

    auto products_without = [&](Eigen::Index j) {
        for (Eigen::Index i = 0; i < n1; ++i) {
            double p = 1.0;
            for (Eigen::Index k = 0; k < n2; ++k) {
                if (k != j) p *= a(i, k);
            }
            others[i] = p;
        }
    };

    for (Eigen::Index j = 0; j < n2; ++j) {
        theta_tried_[j] += 1;
        theta_tried_win_[j] += 1;
        const double t_new = state_.theta[j] + theta_step_[j] * normal(rng);
        if (!(t_new >= config_.theta_min && t_new <= config_.theta_max)) continue;
        const double v_new = gps_->predict_column(static_cast<std::size_t>(j), t_new, mu_new);
        const double v_old = gp_var_[j];

        products_without(j);
        const Eigen::VectorXd shift = mu_new - gp_mean_.col(j);
        const Eigen::VectorXd delta = others.cwiseProduct(shift);
        const double d_lik = delta.dot(corr_) - 0.5 * delta.dot(gram_ * delta);
        // The shifted column keeps its residuals a - mu, only the variance changes.
        const double ss = (a.col(j) - gp_mean_.col(j)).squaredNorm();
        const double d_prior = -ss / (2.0 * v_new) + ss / (2.0 * v_old) -
                               0.5 * static_cast<double>(n1) * (std::log(v_new) - std::log(v_old)) +
                               theta_prior_term(t_new, config_.prior) -
                               theta_prior_term(state_.theta[j], config_.prior);
        const double d = d_lik + d_prior;
        if (accept_log_ratio(d, rng)) {
            state_.theta[j] = t_new;
            a.col(j) += shift;
            gp_mean_.col(j) = mu_new;
            gp_var_[j] = v_new;
            state_.product += delta;
            corr_ -= gram_ * delta;
            state_.log_post += d;
            theta_taken_[j] += 1;
            theta_taken_win_[j] += 1;
        }
    }

    for (Eigen::Index j = 0; j < n2; ++j) {
        products_without(j);
        for (Eigen::Index i = 0; i < n1; ++i) {
            a_tried_(i, j) += 1;
            a_tried_win_(i, j) += 1;
            const double a_old = a(i, j);
            const double a_new = a_old + a_step_(i, j) * normal(rng);
            const double delta = others[i] * (a_new - a_old);
            const double d_lik = delta * corr_[i] - 0.5 * delta * delta * gram_(i, i);
            const double d_prior = a_prior_term(a_new, gp_mean_(i, j), gp_var_[j]) -
                                   a_prior_term(a_old, gp_mean_(i, j), gp_var_[j]);
            const double d = d_lik + d_prior;
            if (accept_log_ratio(d, rng)) {
                a(i, j) = a_new;
                state_.product[i] += delta;
                corr_ -= gram_.col(i) * delta;
                state_.log_post += d;
                a_taken_(i, j) += 1;
                a_taken_win_(i, j) += 1;
            }
        }
    }
}

void Chain::adapt()
{
    for (Eigen::Index j = 0; j < theta_step_.size(); ++j) {
        if (theta_tried_win_[j] > 0) {
            theta_step_[j] *= step_factor(theta_taken_win_[j] / theta_tried_win_[j], config_.target_low,
                                          config_.target_high);
        }
    }
    for (Eigen::Index j = 0; j < a_step_.cols(); ++j) {
        for (Eigen::Index i = 0; i < a_step_.rows(); ++i) {
            if (a_tried_win_(i, j) > 0) {
                a_step_(i, j) *= step_factor(a_taken_win_(i, j) / a_tried_win_(i, j), config_.target_low,
                                             config_.target_high);
            }
        }
    }
    theta_tried_win_.setZero();
    theta_taken_win_.setZero();
    a_tried_win_.setZero();
    a_taken_win_.setZero();
}

bool Chain::check_cache()
{
    const double cached = state_.log_post;
    refresh();
    return std::abs(cached - state_.log_post) <= 1e-8 * (1.0 + std::abs(state_.log_post));
}

Eigen::VectorXd Chain::theta_acceptance() const
{
    return theta_taken_.cwiseQuotient(theta_tried_.cwiseMax(1.0));
}

Eigen::MatrixXd Chain::a_acceptance() const { return a_taken_.cwiseQuotient(a_tried_.cwiseMax(1.0)); }

void Chain::reset_counters()
{
    const auto n1 = static_cast<Eigen::Index>(gps_->num_terms());
    const auto n2 = static_cast<Eigen::Index>(gps_->num_params());
    theta_tried_ = theta_taken_ = theta_tried_win_ = theta_taken_win_ = Eigen::VectorXd::Zero(n2);
    a_tried_ = a_taken_ = a_tried_win_ = a_taken_win_ = Eigen::MatrixXd::Zero(n1, n2);
}

McmcResult run_chain(const gp::GPBank& gps, const ObservationSet& obs, const McmcConfig& config)
{
    Chain chain(gps, obs, config);
    std::mt19937_64 rng(config.seed);
    const auto n2 = static_cast<Eigen::Index>(gps.num_params());
    const std::size_t kept = (config.iterations - config.burn_in) / config.thinning;

    McmcResult res;
    res.samples.resize(static_cast<Eigen::Index>(kept), n2);
    Eigen::VectorXd running = Eigen::VectorXd::Zero(n2);
    Eigen::Index row = 0;

    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t s = 0; s < config.iterations; ++s) {
        chain.step(rng);
        const std::size_t done = s + 1;
        if (done <= config.burn_in) {
            if (done % config.adapt_every == 0) chain.adapt();
            if (done == config.burn_in) chain.reset_counters();
        } else if ((done - config.burn_in) % config.thinning == 0 && row < res.samples.rows()) {
            res.samples.row(row) = chain.state().theta.transpose();
            ++row;
            running += (chain.state().theta - running) / static_cast<double>(row);
            res.trace_sweep.push_back(done);
            res.trace.push_back(running);
        }
        if (done % config.check_every == 0 && !chain.check_cache()) {
            std::ostringstream ss;
            ss << "cached log posterior drifted from its recomputation at sweep " << done;
            throw NumericalError(ss.str());
        }
    }
    const auto t1 = std::chrono::steady_clock::now();
    res.seconds_per_sweep = std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(config.iterations);

    res.samples.conservativeResize(row, n2);
    res.theta_mean = running;
    const Eigen::MatrixXd centered = res.samples.rowwise() - running.transpose();
    res.theta_cov = row > 1 ? Eigen::MatrixXd(centered.transpose() * centered / static_cast<double>(row - 1))
                            : Eigen::MatrixXd::Zero(n2, n2);
    res.theta_std = res.theta_cov.diagonal().cwiseSqrt();
    res.theta_acceptance = chain.theta_acceptance();
    res.a_acceptance = chain.a_acceptance();
    res.final_state = chain.state();

    auto flag = [&](const std::string& name, double rate) {
        if (rate < 0.05 || rate > 0.95) {
            std::ostringstream ss;
            ss << "acceptance rate of " << name << " is " << rate << " after adaptation";
            res.warnings.push_back(ss.str());
        }
    };
    for (Eigen::Index j = 0; j < n2; ++j) flag("theta_" + std::to_string(j + 1), res.theta_acceptance[j]);
    for (Eigen::Index j = 0; j < n2; ++j) {
        flag("a-block " + std::to_string(j + 1), res.a_acceptance.col(j).mean());
    }
    return res;
}

std::pair<fem::Field, fem::Field> posterior_log_kappa(const McmcResult& result, const kle::KLBasis& basis)
{
    if (static_cast<Eigen::Index>(basis.size()) != result.theta_mean.size()) {
        throw ValidationError("KL basis and chain differ in N2");
    }
    fem::Field mean = basis.modes * result.theta_mean;
    fem::Field var = (basis.modes * result.theta_cov).cwiseProduct(basis.modes).rowwise().sum();
    return {std::move(mean), std::move(var)};
}

} // namespace sepuq::mcmc
