#include "sepuq/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "sepuq/errors.hpp"

namespace sepuq::experiment {

using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json config_json(const ExperimentConfig& c)
{
    json j;
    j["profile"] = c.profile;
    j["mesh"] = {{"nx", c.nx}, {"ny", c.ny}};
    j["source"] = c.source;
    j["covariance"] = {{"sigma_gf", c.covariance.sigma_gf}, {"l0", c.covariance.l0}};
    j["kl_modes"] = c.n2;
    j["terms"] = c.n1;
    j["theta_grid"] = {{"min", c.theta_min}, {"max", c.theta_max}, {"points", c.theta_points}, {"measure", c.theta_measure}};
    j["gp"] = {{"sigma_a", c.gp.sigma_a}, {"sigma_1", c.gp.sigma_1}, {"length", c.gp.length}};
    j["pgd"] = {{"tol_a", c.pgd.tol_a},
                {"tol_v", c.pgd.tol_v},
                {"tol_f", c.pgd.tol_f},
                {"max_sweeps", c.pgd.max_sweeps},
                {"screen_sweeps", c.pgd.screen_sweeps}};
    j["observations"] = {{"count", c.observations}, {"noise_percent", c.noise_percent}};
    j["benchmark_samples"] = c.benchmark_samples;
    j["vb"] = {{"theta_intervals", c.vb.theta_intervals}, {"a_window", c.vb.a_window},
               {"a_intervals", c.vb.a_intervals},         {"tol_theta", c.vb.tol_theta},
               {"tol_a", c.vb.tol_a},                     {"max_iters", c.vb.max_iters}};
    j["mcmc"] = {{"iterations", c.mcmc.iterations}, {"burn_in", c.mcmc.burn_in},
                 {"thinning", c.mcmc.thinning},     {"theta_step", c.mcmc.theta_step},
                 {"a_step", c.mcmc.a_step},         {"adapt_every", c.mcmc.adapt_every},
                 {"check_every", c.mcmc.check_every}};
    j["prior"] = {{"theta0", c.vb.prior.theta0}, {"sigma0", c.vb.prior.sigma0}};
    j["seed"] = c.seed;
    return j;
}

template <class T> void read(const json& j, const char* key, T& out)
{
    if (j.contains(key)) out = j.at(key).get<T>();
}

// Settings that several modules share are kept in one place.
void sync(ExperimentConfig& c)
{
    c.vb.theta_min = c.mcmc.theta_min = c.theta_min;
    c.vb.theta_max = c.mcmc.theta_max = c.theta_max;
    c.mcmc.prior = c.vb.prior;
    c.pgd.max_terms = c.n1;
}

} // namespace

ExperimentConfig profile(const std::string& name)
{
    ExperimentConfig c;
    c.profile = name;
    if (name == "ci") {
        c.nx = c.ny = 25;
        c.n2 = 4;
        c.n1 = 6;
        c.mcmc.iterations = 10000;
        c.mcmc.burn_in = 2000;
    } else if (name == "paper") {
        c.nx = c.ny = 50;
        c.n2 = 10;
        c.n1 = 10;
        c.mcmc.iterations = 100000;
        c.mcmc.burn_in = 10000;
    } else {
        throw ValidationError("unknown profile '" + name + "' (expected ci or paper)");
    }
    sync(c);
    return c;
}

std::string to_json(const ExperimentConfig& config) { return config_json(config).dump(2); }

ExperimentConfig from_json(const std::string& text, const ExperimentConfig& base)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c = base;
    try {
        read(j, "profile", c.profile);
        if (j.contains("mesh")) {
            read(j["mesh"], "nx", c.nx);
            read(j["mesh"], "ny", c.ny);
        }
        read(j, "source", c.source);
        if (j.contains("covariance")) {
            read(j["covariance"], "sigma_gf", c.covariance.sigma_gf);
            read(j["covariance"], "l0", c.covariance.l0);
        }
        read(j, "kl_modes", c.n2);
        read(j, "terms", c.n1);
        if (j.contains("theta_grid")) {
            read(j["theta_grid"], "min", c.theta_min);
            read(j["theta_grid"], "max", c.theta_max);
            read(j["theta_grid"], "points", c.theta_points);
            read(j["theta_grid"], "measure", c.theta_measure);
        }
        if (j.contains("gp")) {
            read(j["gp"], "sigma_a", c.gp.sigma_a);
            read(j["gp"], "sigma_1", c.gp.sigma_1);
            read(j["gp"], "length", c.gp.length);
        }
        if (j.contains("pgd")) {
            const auto& p = j["pgd"];
            read(p, "tol_a", c.pgd.tol_a);
            read(p, "tol_v", c.pgd.tol_v);
            read(p, "tol_f", c.pgd.tol_f);
            read(p, "max_sweeps", c.pgd.max_sweeps);
            read(p, "screen_sweeps", c.pgd.screen_sweeps);
        }
        if (j.contains("observations")) {
            read(j["observations"], "count", c.observations);
            read(j["observations"], "noise_percent", c.noise_percent);
        }
        read(j, "benchmark_samples", c.benchmark_samples);
        if (j.contains("vb")) {
            const auto& v = j["vb"];
            read(v, "theta_intervals", c.vb.theta_intervals);
            read(v, "a_window", c.vb.a_window);
            read(v, "a_intervals", c.vb.a_intervals);
            read(v, "tol_theta", c.vb.tol_theta);
            read(v, "tol_a", c.vb.tol_a);
            read(v, "max_iters", c.vb.max_iters);
        }
        if (j.contains("mcmc")) {
            const auto& m = j["mcmc"];
            read(m, "iterations", c.mcmc.iterations);
            read(m, "burn_in", c.mcmc.burn_in);
            read(m, "thinning", c.mcmc.thinning);
            read(m, "theta_step", c.mcmc.theta_step);
            read(m, "a_step", c.mcmc.a_step);
            read(m, "adapt_every", c.mcmc.adapt_every);
            read(m, "check_every", c.mcmc.check_every);
        }
        if (j.contains("prior")) {
            read(j["prior"], "theta0", c.vb.prior.theta0);
            read(j["prior"], "sigma0", c.vb.prior.sigma0);
        }
        read(j, "seed", c.seed);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config has a field of the wrong type: ") + e.what());
    }
    sync(c);
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str(), base);
}

void validate(const ExperimentConfig& c)
{
    auto fail = [](const std::string& msg) { throw ValidationError("config: " + msg); };
    if (c.nx < 2 || c.ny < 2) fail("mesh needs at least 2 cells per axis");
    if (!(c.covariance.sigma_gf > 0.0) || !(c.covariance.l0 > 0.0)) fail("covariance parameters must be positive");
    if (!(c.theta_max > c.theta_min) || c.theta_points < 2) fail("theta grid needs two points and a nonempty range");
    if (c.theta_measure != "prior" && c.theta_measure != "lebesgue") fail("theta measure must be prior or lebesgue");
    if (!(c.vb.prior.sigma0 > 0.0)) fail("prior standard deviation must be positive");
    if (!(c.gp.sigma_a > 0.0) || !(c.gp.sigma_1 > 0.0) || !(c.gp.length > 0.0)) fail("GP hyperparameters must be positive");
    if (!(c.pgd.tol_a > 0.0) || !(c.pgd.tol_v > 0.0) || !(c.pgd.tol_f > 0.0) || c.pgd.max_sweeps < 1) {
        fail("PGD tolerances must be positive");
    }
    const auto k = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(c.observations))));
    if (c.observations == 0 || k * k != c.observations) fail("observation count must be a positive perfect square");
    if (!(c.noise_percent > 0.0)) fail("noise percentage must be positive");
    if (c.mcmc.burn_in >= c.mcmc.iterations) fail("MCMC burn-in must be shorter than the run");
    if (c.vb.max_iters < 1) fail("VB needs at least one iteration");
}

std::string config_hash(const ExperimentConfig& config)
{
    const std::string text = config_json(config).dump();
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw NumericalError("SHA-256 digest failed");
    }
    std::ostringstream ss;
    for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return ss.str();
}

std::uint64_t reference_seed(const ExperimentConfig& c) { return c.seed; }
std::uint64_t noise_seed(const ExperimentConfig& c) { return c.seed + 1; }
std::uint64_t benchmark_seed(const ExperimentConfig& c) { return c.seed + 2; }
std::uint64_t chain_seed(const ExperimentConfig& c) { return c.seed + 3; }

ThetaGrid theta_grid(const ExperimentConfig& config)
{
    if (config.theta_measure == "lebesgue") return ThetaGrid::uniform(config.theta_min, config.theta_max, config.theta_points);
    return ThetaGrid::gaussian(config.theta_min, config.theta_max, config.theta_points, config.vb.prior.theta0,
                               config.vb.prior.sigma0);
}

fem::Field source_field(const ExperimentConfig& config, const fem::GridMesh& mesh)
{
    return fem::Field::Constant(static_cast<Eigen::Index>(mesh.num_nodes()), config.source);
}

Pipeline build_pipeline(const ExperimentConfig& config)
{
    validate(config);
    auto mesh = fem::build_mesh(config.nx, config.ny);
    auto t0 = std::chrono::steady_clock::now();
    auto basis = kle::build_kl_basis(mesh, config.covariance, config.n2);
    const double kle_s = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    auto options = config.pgd;
    options.max_terms = config.n1;
    auto sol = pgd::enrich(mesh, basis, theta_grid(config), source_field(config, mesh), options);
    const double pgd_s = seconds_since(t0);
    auto p = assemble_pipeline(config, std::move(basis), std::move(sol));
    p.kle_seconds = kle_s;
    p.pgd_seconds = pgd_s;
    return p;
}

Pipeline assemble_pipeline(const ExperimentConfig& config, kle::KLBasis basis, pgd::SeparableSolution surrogate)
{
    validate(config);
    auto mesh = fem::build_mesh(config.nx, config.ny);
    if (basis.num_nodes() != mesh.num_nodes() || basis.size() != config.n2) {
        throw ValidationError("stored KL basis does not match the configured mesh or N2");
    }
    if (surrogate.num_params != config.n2 || surrogate.num_nodes != mesh.num_nodes()) {
        throw ValidationError("stored surrogate does not match the configured mesh or N2");
    }
    if (surrogate.num_terms() == 0) throw ValidationError("surrogate has no terms");
    auto source = source_field(config, mesh);
    auto gps = std::make_shared<gp::GPBank>(surrogate.grid, surrogate.parametric_tables(), config.gp);
    return Pipeline{config, std::move(mesh), std::move(basis), std::move(source), std::move(surrogate), std::move(gps)};
}

Reference generate_reference(const ExperimentConfig& config, const kle::KLBasis& basis, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Reference r;
    r.theta.resize(static_cast<Eigen::Index>(basis.size()));
    for (Eigen::Index j = 0; j < r.theta.size(); ++j) {
        double t = normal(rng);
        while (!(t >= config.theta_min && t <= config.theta_max)) t = normal(rng);
        r.theta[j] = t;
    }
    r.log_kappa = kle::log_kappa(basis, r.theta);
    r.kappa = r.log_kappa.array().exp();
    return r;
}

std::vector<fem::Point> observation_lattice(std::size_t count)
{
    const auto k = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(count))));
    if (count == 0 || k * k != count) {
        throw ValidationError("observation count " + std::to_string(count) + " is not a positive perfect square");
    }
    std::vector<fem::Point> pts;
    pts.reserve(count);
    const double h = 1.0 / static_cast<double>(k + 1);
    for (std::size_t iy = 1; iy <= k; ++iy) {
        for (std::size_t ix = 1; ix <= k; ++ix) {
            const fem::Point p{ix * h, iy * h};
            if (p.x <= 0.0 || p.x >= 1.0 || p.y <= 0.0 || p.y >= 1.0) {
                throw ValidationError("observation lattice point lies on the boundary");
            }
            pts.push_back(p);
        }
    }
    return pts;
}

SyntheticData generate_observations(const ExperimentConfig& config, const fem::GridMesh& mesh,
                                    const fem::Field& kappa_ref, std::uint64_t seed)
{
    SyntheticData d;
    d.locations = observation_lattice(config.observations);
    const auto u = fem::solve(fem::assemble(mesh, kappa_ref, source_field(config, mesh)), config.pgd.solver);
    d.clean = fem::sample_at_points(mesh, u, d.locations);
    d.sigma_y = config.noise_percent / 100.0 * d.clean.cwiseAbs().mean();
    if (!(d.sigma_y > 0.0)) throw ValidationError("observed values are all zero; noise level is undefined");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, d.sigma_y);
    d.noisy = d.clean;
    for (Eigen::Index m = 0; m < d.noisy.size(); ++m) d.noisy[m] += normal(rng);
    return d;
}

ObservationSet observation_set(const Pipeline& p, const SyntheticData& data)
{
    return make_observations(p.mesh, p.surrogate, data.locations, data.noisy, data.sigma_y);
}

BenchmarkResult forward_benchmark(const Pipeline& p, std::size_t samples, std::uint64_t seed)
{
    const auto& grid = p.surrogate.grid;
    std::mt19937_64 rng(seed);
    const auto n2 = static_cast<Eigen::Index>(p.basis.size());
    BenchmarkResult r;
    r.thetas.resize(static_cast<Eigen::Index>(samples), n2);
    r.l2_error.resize(static_cast<Eigen::Index>(samples));
    r.energy_error.resize(static_cast<Eigen::Index>(samples));
    for (std::size_t s = 0; s < samples; ++s) {
        Eigen::VectorXd theta = kle::sample_theta(rng, p.basis.size());
        for (Eigen::Index j = 0; j < n2; ++j) theta[j] = grid.points[static_cast<Eigen::Index>(grid.nearest(theta[j]))];
        const auto k = kle::kappa(p.basis, theta);
        const auto u = fem::solve(fem::assemble(p.mesh, k, p.source), p.config.pgd.solver);
        const auto us = pgd::evaluate_surrogate_field(p.surrogate, theta);
        const auto si = static_cast<Eigen::Index>(s);
        r.thetas.row(si) = theta.transpose();
        r.l2_error[si] = fem::relative_error(us, u, [&](const fem::Field& x) { return fem::l2_norm(p.mesh, x); });
        r.energy_error[si] =
            fem::relative_error(us, u, [&](const fem::Field& x) { return fem::energy_norm(p.mesh, k, x); });
    }
    if (samples > 0) {
        r.mean_l2 = r.l2_error.mean();
        r.max_l2 = r.l2_error.maxCoeff();
        r.mean_energy = r.energy_error.mean();
        r.max_energy = r.energy_error.maxCoeff();
    }
    return r;
}

double fem_misfit(const Pipeline& p, const Eigen::VectorXd& theta, const ObservationSet& obs)
{
    const auto u = fem::solve(fem::assemble(p.mesh, kle::kappa(p.basis, theta), p.source), p.config.pgd.solver);
    const Eigen::VectorXd pred = fem::sample_at_points(p.mesh, u, obs.locations);
    return (obs.values - pred).norm() / std::sqrt(static_cast<double>(obs.size()));
}

double surrogate_misfit(const Pipeline& p, const Eigen::VectorXd& theta, const ObservationSet& obs)
{
    const Eigen::VectorXd pred = obs.modes * pgd::term_coefficients(p.surrogate, theta);
    return (obs.values - pred).norm() / std::sqrt(static_cast<double>(obs.size()));
}

double fem_solve_seconds(const Pipeline& p, int repeats)
{
    if (repeats < 1) throw ValidationError("fem_solve_seconds needs at least one repeat");
    const Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.basis.size()));
    const auto t0 = std::chrono::steady_clock::now();
    volatile double sink = 0.0;
    for (int r = 0; r < repeats; ++r) {
        const auto u = fem::solve(fem::assemble(p.mesh, kle::kappa(p.basis, theta), p.source), p.config.pgd.solver);
        sink = sink + u[0];
    }
    return seconds_since(t0) / repeats;
}

double field_error(const fem::GridMesh& mesh, const fem::Field& field, const fem::Field& reference)
{
    return fem::relative_error(field, reference, [&](const fem::Field& x) { return fem::l2_norm(mesh, x); });
}

Eigen::MatrixXd field_grid(const fem::GridMesh& mesh, const fem::Field& field)
{
    if (static_cast<std::size_t>(field.size()) != mesh.num_nodes()) throw ValidationError("field size mismatch");
    Eigen::MatrixXd g(mesh.ny() + 1, mesh.nx() + 1);
    for (int iy = 0; iy <= mesh.ny(); ++iy) {
        for (int ix = 0; ix <= mesh.nx(); ++ix) g(iy, ix) = field[static_cast<Eigen::Index>(mesh.node_index(ix, iy))];
    }
    return g;
}

void put_basis(io::ArrayFile& file, const kle::KLBasis& basis)
{
    file.put("kl_eigenvalues", basis.eigenvalues);
    file.put("kl_eigenfields", basis.eigenfields);
    file.put("kl_modes", basis.modes);
    file.put("kl_weights", basis.weights);
    file.put("kl_total_variance", basis.total_variance);
}

kle::KLBasis get_basis(const io::ArrayFile& file)
{
    kle::KLBasis b;
    b.eigenvalues = file.vector("kl_eigenvalues");
    b.eigenfields = file.matrix("kl_eigenfields");
    b.modes = file.matrix("kl_modes");
    b.weights = file.vector("kl_weights");
    b.total_variance = file.scalar("kl_total_variance");
    return b;
}

void put_surrogate(io::ArrayFile& file, const pgd::SeparableSolution& sol)
{
    const auto n1 = static_cast<Eigen::Index>(sol.num_terms());
    const auto ng = sol.grid.size();
    file.put("pgd_grid", Eigen::VectorXd(Eigen::Vector3d(sol.grid.lo, sol.grid.hi, static_cast<double>(ng))));
    Eigen::MatrixXd v(static_cast<Eigen::Index>(sol.num_nodes), n1);
    io::Array a;
    a.dims = {sol.num_terms(), sol.num_params, ng};
    Eigen::MatrixXd diag(n1, 6);
    for (Eigen::Index i = 0; i < n1; ++i) {
        const auto& t = sol.terms[static_cast<std::size_t>(i)];
        v.col(i) = t.v;
        for (Eigen::Index j = 0; j < t.a.rows(); ++j) {
            for (Eigen::Index q = 0; q < t.a.cols(); ++q) a.values.push_back(t.a(j, q));
        }
        const auto& d = sol.diagnostics[static_cast<std::size_t>(i)];
        diag.row(i) << d.energy, d.term_norm_sq, d.residual_drop, d.residual_norm, d.sweeps, d.converged ? 1.0 : 0.0;
    }
    file.put("pgd_v", v);
    file.put("pgd_a", std::move(a));
    file.put("pgd_diagnostics", diag);
    file.put("pgd_initial_residual", sol.initial_residual_norm);
}

pgd::SeparableSolution get_surrogate(const io::ArrayFile& file)
{
    const Eigen::VectorXd g = file.vector("pgd_grid");
    if (g.size() != 3) throw ValidationError("pgd_grid record must hold lo, hi, n");
    pgd::SeparableSolution sol;
    sol.grid = ThetaGrid::uniform(g[0], g[1], static_cast<std::size_t>(g[2]));
    const Eigen::MatrixXd v = file.matrix("pgd_v");
    const auto& a = file.array("pgd_a");
    const Eigen::MatrixXd diag = file.matrix("pgd_diagnostics");
    if (a.dims.size() != 3 || a.dims[0] != static_cast<std::size_t>(v.cols()) || a.dims[2] != sol.grid.size() ||
        diag.rows() != v.cols() || diag.cols() != 6) {
        throw ValidationError("stored surrogate records have inconsistent shapes");
    }
    sol.num_params = a.dims[1];
    sol.num_nodes = static_cast<std::size_t>(v.rows());
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < v.cols(); ++i) {
        pgd::SeparableTerm t;
        t.v = v.col(i);
        t.a.resize(static_cast<Eigen::Index>(a.dims[1]), static_cast<Eigen::Index>(a.dims[2]));
        for (Eigen::Index j = 0; j < t.a.rows(); ++j) {
            for (Eigen::Index q = 0; q < t.a.cols(); ++q) t.a(j, q) = a.values[k++];
        }
        sol.terms.push_back(std::move(t));
        pgd::TermDiagnostics d;
        d.energy = diag(i, 0);
        d.term_norm_sq = diag(i, 1);
        d.residual_drop = diag(i, 2);
        d.residual_norm = diag(i, 3);
        d.sweeps = static_cast<int>(diag(i, 4));
        d.converged = diag(i, 5) != 0.0;
        sol.diagnostics.push_back(d);
    }
    sol.initial_residual_norm = file.scalar("pgd_initial_residual");
    return sol;
}

} // namespace sepuq::experiment
