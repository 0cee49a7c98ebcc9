#include "sepuq/vb_inversion.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Cholesky>

#include "sepuq/errors.hpp"

namespace sepuq::vb {

namespace {

void check_group(const VBState& state, std::size_t k)
{
    if (k >= state.num_params()) {
        std::ostringstream ss;
        ss << "group index " << k << " out of range (" << state.num_params() << " parameters)";
        throw ValidationError(ss.str());
    }
}

void check_config(const VBConfig& c)
{
    if (!(c.theta_max > c.theta_min) || c.theta_intervals < 1 || c.a_intervals < 2 || !(c.a_window > 0.0) ||
        !(c.tol_theta > 0.0) || !(c.tol_a > 0.0) || c.max_iters < 1 || !(c.prior.sigma0 > 0.0)) {
        throw ValidationError("VB configuration needs a nonempty theta range and positive counts and tolerances");
    }
}

// Trapezoid-normalized mean and variance of a density given by its log on a uniform grid.
Moments grid_moments(const Eigen::VectorXd& x, const Eigen::VectorXd& weights, const Eigen::VectorXd& log_density)
{
    const double top = log_density.maxCoeff();
    if (!std::isfinite(top)) throw NumericalError("log density is not finite on the integration grid");
    double z = 0.0;
    double m1 = 0.0;
    for (Eigen::Index q = 0; q < x.size(); ++q) {
        const double p = weights[q] * std::exp(log_density[q] - top);
        z += p;
        m1 += p * x[q];
    }
    if (!(z > 0.0) || !std::isfinite(z)) throw NumericalError("density normalizer underflowed");
    const double mean = m1 / z;
    double m2 = 0.0;
    for (Eigen::Index q = 0; q < x.size(); ++q) {
        const double d = x[q] - mean;
        m2 += weights[q] * std::exp(log_density[q] - top) * d * d;
    }
    return {mean, m2 / z};
}

struct Conditional
{
    double log_q = 0.0;
    Eigen::VectorXd mean;
    Eigen::VectorXd var;
};

Conditional conditional_at(double theta, const RMoments& moments, const ObservationSet& obs, const gp::GPBank& gps,
                           std::size_t k, const ThetaPrior& prior)
{
    const auto n1 = static_cast<Eigen::Index>(gps.num_terms());
    Eigen::VectorXd mu(n1);
    const double v = gps.predict_column(k, theta, mu);
    const Eigen::VectorXd var = Eigen::VectorXd::Constant(n1, v);
    const auto sb = sigma_beta(moments, obs, mu, var);

    Eigen::LLT<Eigen::MatrixXd> llt(sb.sigma);
    if (llt.info() != Eigen::Success) {
        std::ostringstream ss;
        ss << "Sigma is not positive definite at theta_" << k << " = " << theta;
        throw NumericalError(ss.str());
    }
    const Eigen::VectorXd x = llt.solve(sb.beta);
    const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(n1, n1));
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();

    Conditional c;
    const double d = theta - prior.theta0;
    c.log_q = -0.5 * log_det - 0.5 * var.array().log().sum() + 0.25 * sb.beta.dot(x) -
              d * d / (2.0 * prior.sigma0 * prior.sigma0) - (mu.array().square() / (2.0 * var.array())).sum();
    if (!std::isfinite(c.log_q)) {
        std::ostringstream ss;
        ss << "log q(theta_" << k << ") is not finite at " << theta;
        throw NumericalError(ss.str());
    }
    c.mean = 0.5 * x;
    c.var = 0.5 * inv.diagonal();
    return c;
}

double squared_change(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).squaredNorm(); }

} // namespace

VBState initial_state(const gp::GPBank& gps, const ThetaPrior& prior)
{
    const auto n1 = static_cast<Eigen::Index>(gps.num_terms());
    const auto n2 = static_cast<Eigen::Index>(gps.num_params());
    VBState s;
    s.theta_mean = Eigen::VectorXd::Constant(n2, prior.theta0);
    s.theta_var = Eigen::VectorXd::Constant(n2, prior.sigma0 * prior.sigma0);
    s.a_mean.resize(n1, n2);
    s.a_var.resize(n1, n2);
    Eigen::VectorXd mu(n1);
    for (Eigen::Index j = 0; j < n2; ++j) {
        const double v = gps.predict_column(static_cast<std::size_t>(j), prior.theta0, mu);
        s.a_mean.col(j) = mu;
        s.a_var.col(j).setConstant(v);
    }
    return s;
}

RMoments compute_R_moments(const VBState& state, std::size_t k)
{
    check_group(state, k);
    const auto n1 = state.a_mean.rows();
    RMoments r;
    r.mean = Eigen::VectorXd::Ones(n1);
    r.cross = Eigen::MatrixXd::Ones(n1, n1);
    for (Eigen::Index j = 0; j < state.a_mean.cols(); ++j) {
        if (static_cast<std::size_t>(j) == k) continue;
        const Eigen::VectorXd m = state.a_mean.col(j);
        r.mean.array() *= m.array();
        r.cross.array() *= (m * m.transpose()).array();
    }
    // Diagonal carries the variances: E R_m^2 = prod (E^2 a + Var a).
    for (Eigen::Index m = 0; m < n1; ++m) {
        double d = 1.0;
        for (Eigen::Index j = 0; j < state.a_mean.cols(); ++j) {
            if (static_cast<std::size_t>(j) == k) continue;
            d *= state.a_mean(m, j) * state.a_mean(m, j) + state.a_var(m, j);
        }
        r.cross(m, m) = d;
    }
    return r;
}

SigmaBeta sigma_beta(const RMoments& moments, const ObservationSet& obs, const Eigen::VectorXd& gp_mean,
                     const Eigen::VectorXd& gp_var)
{
    const auto n1 = gp_mean.size();
    if (moments.mean.size() != n1 || gp_var.size() != n1 || obs.modes.cols() != n1) {
        throw ValidationError("sigma_beta: term counts disagree");
    }
    if ((gp_var.array() <= 0.0).any()) throw ValidationError("sigma_beta: GP variances must be positive");
    const double s2 = obs.sigma_y * obs.sigma_y;
    const Eigen::MatrixXd gram = obs.modes.transpose() * obs.modes;
    const Eigen::VectorXd proj = obs.modes.transpose() * obs.values;

    SigmaBeta sb;
    sb.sigma = moments.cross.cwiseProduct(gram) / (2.0 * s2);
    sb.sigma.diagonal().array() += 1.0 / (2.0 * gp_var.array());
    sb.beta = moments.mean.cwiseProduct(proj) / s2 + gp_mean.cwiseQuotient(gp_var);
    return sb;
}

double log_q_theta(double theta, const RMoments& moments, const ObservationSet& obs, const gp::GPBank& gps,
                   std::size_t k, const ThetaPrior& prior)
{
    return conditional_at(theta, moments, obs, gps, k, prior).log_q;
}

GroupPosterior group_posterior(const VBState& state, const gp::GPBank& gps, const ObservationSet& obs,
                               const VBConfig& config, std::size_t k)
{
    check_config(config);
    check_group(state, k);
    const auto moments = compute_R_moments(state, k);
    GroupPosterior g;
    g.k = k;
    g.grid = ThetaGrid::uniform(config.theta_min, config.theta_max, static_cast<std::size_t>(config.theta_intervals) + 1);
    const auto nq = static_cast<Eigen::Index>(g.grid.size());
    const auto n1 = static_cast<Eigen::Index>(state.num_terms());
    g.log_q.resize(nq);
    g.cond_mean.resize(n1, nq);
    g.cond_var.resize(n1, nq);
    for (Eigen::Index q = 0; q < nq; ++q) {
        auto c = conditional_at(g.grid.points[q], moments, obs, gps, k, config.prior);
        g.log_q[q] = c.log_q;
        g.cond_mean.col(q) = c.mean;
        g.cond_var.col(q) = c.var;
    }
    g.log_q.array() -= g.log_q.maxCoeff();
    return g;
}

Moments update_theta(VBState& state, const GroupPosterior& group)
{
    const auto m = grid_moments(group.grid.points, group.grid.weights, group.log_q);
    state.theta_mean[static_cast<Eigen::Index>(group.k)] = m.mean;
    state.theta_var[static_cast<Eigen::Index>(group.k)] = m.var;
    return m;
}

Moments update_a(VBState& state, const GroupPosterior& group, std::size_t p, const VBConfig& config)
{
    if (p >= state.num_terms()) throw ValidationError("update_a: term index out of range");
    const auto ip = static_cast<Eigen::Index>(p);
    const auto nq = group.grid.points.size();
    const auto na = config.a_intervals;

    // Inner trapezoid over a on each theta-slice, then the outer one over theta.
    double z = 0.0;
    double m1 = 0.0;
    double m2 = 0.0;
    for (Eigen::Index q = 0; q < nq; ++q) {
        const double cm = group.cond_mean(ip, q);
        const double cv = group.cond_var(ip, q);
        if (!(cv > 0.0)) throw NumericalError("conditional variance of a is not positive");
        const double sd = std::sqrt(cv);
        const double lo = cm - config.a_window * sd;
        const double h = 2.0 * config.a_window * sd / na;
        double s0 = 0.0;
        double s1 = 0.0;
        double s2 = 0.0;
        for (int r = 0; r <= na; ++r) {
            const double a = lo + r * h;
            const double w = (r == 0 || r == na) ? 0.5 * h : h;
            const double d = a - cm;
            const double dens = w * std::exp(-0.5 * d * d / cv) / std::sqrt(2.0 * M_PI * cv);
            s0 += dens;
            s1 += dens * a;
            s2 += dens * a * a;
        }
        const double wq = group.grid.weights[q] * std::exp(group.log_q[q]);
        z += wq * s0;
        m1 += wq * s1;
        m2 += wq * s2;
    }
    if (!(z > 0.0) || !std::isfinite(z)) throw NumericalError("joint density normalizer underflowed");
    Moments m;
    m.mean = m1 / z;
    m.var = std::max(m2 / z - m.mean * m.mean, 0.0);
    state.a_mean(ip, static_cast<Eigen::Index>(group.k)) = m.mean;
    state.a_var(ip, static_cast<Eigen::Index>(group.k)) = m.var;
    return m;
}

void sweep(VBState& state, const gp::GPBank& gps, const ObservationSet& obs, const VBConfig& config)
{
    for (std::size_t k = 0; k < state.num_params(); ++k) {
        const auto group = group_posterior(state, gps, obs, config, k);
        update_theta(state, group);
        for (std::size_t p = 0; p < state.num_terms(); ++p) update_a(state, group, p, config);
    }
}

VBResult run_vb(const gp::GPBank& gps, const ObservationSet& obs, const VBConfig& config)
{
    check_config(config);
    if (obs.num_terms() != gps.num_terms()) {
        throw ValidationError("observation modes and GP bank disagree on the number of terms");
    }
    VBResult res;
    res.state = initial_state(gps, config.prior);
    auto& st = res.state;
    auto& h = res.history;
    while (h.iterations < config.max_iters) {
        const Eigen::VectorXd theta_old = st.theta_mean;
        const Eigen::MatrixXd a_old = st.a_mean;
        sweep(st, gps, obs, config);
        ++h.iterations;
        const double dt = squared_change(st.theta_mean, theta_old);
        const double da = squared_change(st.a_mean, a_old);
        h.delta_theta.push_back(dt);
        h.delta_a.push_back(da);
        h.delta_mu.push_back(std::sqrt(dt));
        h.theta_trace.push_back(st.theta_mean);
        if (dt <= config.tol_theta && da <= config.tol_a) {
            h.converged = true;
            break;
        }
    }
    return res;
}

std::pair<fem::Field, fem::Field> posterior_log_kappa(const VBState& state, const kle::KLBasis& basis)
{
    if (basis.size() != state.num_params()) throw ValidationError("KL basis and VB state differ in N2");
    fem::Field mean = basis.modes * state.theta_mean;
    fem::Field var = basis.modes.array().square().matrix() * state.theta_var;
    return {std::move(mean), std::move(var)};
}

} // namespace sepuq::vb
