#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "sepuq/array_io.hpp"
#include "sepuq/errors.hpp"
#include "sepuq/experiment.hpp"

namespace fs = std::filesystem;
using namespace sepuq;
namespace ex = sepuq::experiment;

namespace {

struct Options
{
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "sepuq_out";
    std::string profile = "ci";
};

struct Context
{
    ex::ExperimentConfig config;
    std::string hash;
    fs::path out;
};

Context make_context(const Options& o)
{
    Context c;
    c.config = ex::profile(o.profile);
    if (!o.config_path.empty()) c.config = ex::load_config(o.config_path, c.config);
    if (o.seed) c.config.seed = *o.seed;
    ex::validate(c.config);
    c.hash = ex::config_hash(c.config);
    c.out = o.out;
    fs::create_directories(c.out);
    std::ofstream(c.out / "config.json") << ex::to_json(c.config) << '\n';
    return c;
}

io::ArrayFile load_artifact(const Context& c, const std::string& name, const std::string& producer)
{
    const auto path = c.out / name;
    if (!fs::exists(path)) {
        throw ValidationError("missing " + path.string() + "; run `sepuq " + producer + "` first");
    }
    auto file = io::ArrayFile::load(path);
    if (!file.has("config_hash") || file.text("config_hash") != c.hash) {
        throw ValidationError(path.string() + " was produced under a different config; rerun `sepuq " + producer + "`");
    }
    return file;
}

void save_artifact(const Context& c, io::ArrayFile& file, const std::string& name)
{
    file.put_text("config_hash", c.hash);
    file.save(c.out / name);
    std::cout << "wrote " << (c.out / name).string() << '\n';
}

double elapsed(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ex::Pipeline load_pipeline(const Context& c)
{
    auto kle = load_artifact(c, "kle.sepuq", "kle-build");
    auto pgd = load_artifact(c, "pgd.sepuq", "pgd-build");
    return ex::assemble_pipeline(c.config, ex::get_basis(kle), ex::get_surrogate(pgd));
}

ObservationSet load_observations(const Context& c, const ex::Pipeline& p)
{
    auto data = load_artifact(c, "data.sepuq", "gen-data");
    const Eigen::MatrixXd loc = data.matrix("locations");
    std::vector<fem::Point> pts;
    for (Eigen::Index m = 0; m < loc.rows(); ++m) pts.push_back({loc(m, 0), loc(m, 1)});
    return make_observations(p.mesh, p.surrogate, pts, data.vector("y"), data.scalar("sigma_y"));
}

std::vector<std::string> trace_header(std::size_t n2)
{
    std::vector<std::string> h = {"iteration", "delta_mu"};
    for (std::size_t j = 0; j < n2; ++j) h.push_back("E_theta_" + std::to_string(j + 1));
    return h;
}

void write_timing(const fs::path& path, const std::string& method, double total, double iterations)
{
    std::ofstream out(path);
    out << std::setprecision(17) << "method,total_seconds,iterations,seconds_per_iteration\n"
        << method << ',' << total << ',' << iterations << ',' << total / iterations << '\n';
}

void cmd_kle_build(const Context& c)
{
    const auto mesh = fem::build_mesh(c.config.nx, c.config.ny);
    const auto t0 = std::chrono::steady_clock::now();
    const auto basis = kle::build_kl_basis(mesh, c.config.covariance, c.config.n2);
    std::cout << "KL basis: " << basis.size() << " modes, energy ratio " << kle::energy_ratio(basis, basis.size())
              << ", " << elapsed(t0) << " s\n";
    io::ArrayFile f;
    ex::put_basis(f, basis);
    save_artifact(c, f, "kle.sepuq");
}

void cmd_pgd_build(const Context& c)
{
    auto kle = load_artifact(c, "kle.sepuq", "kle-build");
    const auto basis = ex::get_basis(kle);
    const auto mesh = fem::build_mesh(c.config.nx, c.config.ny);
    const auto t0 = std::chrono::steady_clock::now();
    const auto sol = pgd::enrich(mesh, basis, ex::theta_grid(c.config), ex::source_field(c.config, mesh), c.config.pgd);
    std::cout << "separable surrogate: " << sol.num_terms() << " terms, " << elapsed(t0) << " s\n";
    for (std::size_t i = 0; i < sol.num_terms(); ++i) {
        const auto& d = sol.diagnostics[i];
        std::cout << "  term " << i + 1 << ": E = " << d.energy << ", ||t||^2 = " << d.term_norm_sq
                  << ", residual = " << d.residual_norm << ", sweeps = " << d.sweeps
                  << (d.converged ? "" : " (not converged)") << '\n';
    }
    io::ArrayFile f;
    ex::put_surrogate(f, sol);
    save_artifact(c, f, "pgd.sepuq");
}

void cmd_forward_bench(const Context& c)
{
    const auto p = load_pipeline(c);
    const auto r = ex::forward_benchmark(p, c.config.benchmark_samples, ex::benchmark_seed(c.config));
    Eigen::MatrixXd rows(r.l2_error.size(), 3);
    for (Eigen::Index s = 0; s < rows.rows(); ++s) rows.row(s) << static_cast<double>(s), r.l2_error[s], r.energy_error[s];
    io::write_csv(c.out / "forward_bench.csv", {"sample", "relative_l2", "relative_energy"}, rows);
    Eigen::MatrixXd summary(1, 4);
    summary << r.mean_l2, r.max_l2, r.mean_energy, r.max_energy;
    io::write_csv(c.out / "forward_bench_summary.csv", {"mean_l2", "max_l2", "mean_energy", "max_energy"}, summary);
    std::cout << std::setprecision(4) << "mean relative L2 " << 100 * r.mean_l2 << "%, max " << 100 * r.max_l2
              << "%\nmean relative energy " << 100 * r.mean_energy << "%, max " << 100 * r.max_energy << "%\n";
}

void cmd_gen_data(const Context& c)
{
    auto kle = load_artifact(c, "kle.sepuq", "kle-build");
    const auto basis = ex::get_basis(kle);
    const auto mesh = fem::build_mesh(c.config.nx, c.config.ny);
    const auto ref = ex::generate_reference(c.config, basis, ex::reference_seed(c.config));
    const auto data = ex::generate_observations(c.config, mesh, ref.kappa, ex::noise_seed(c.config));
    Eigen::MatrixXd loc(static_cast<Eigen::Index>(data.locations.size()), 2);
    for (Eigen::Index m = 0; m < loc.rows(); ++m) loc.row(m) << data.locations[m].x, data.locations[m].y;
    io::ArrayFile f;
    f.put("theta_ref", ref.theta);
    f.put("log_kappa_ref", ref.log_kappa);
    f.put("kappa_ref", ref.kappa);
    f.put("locations", loc);
    f.put("y_clean", data.clean);
    f.put("y", data.noisy);
    f.put("sigma_y", data.sigma_y);
    std::cout << data.locations.size() << " observations, sigma_y = " << data.sigma_y << '\n';
    save_artifact(c, f, "data.sepuq");
}

void cmd_invert_vb(const Context& c)
{
    const auto p = load_pipeline(c);
    const auto obs = load_observations(c, p);
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = vb::run_vb(*p.gps, obs, c.config.vb);
    const double secs = elapsed(t0);
    const auto& h = res.history;

    const auto n2 = static_cast<Eigen::Index>(p.basis.size());
    Eigen::MatrixXd trace(h.iterations, 2 + n2);
    for (int it = 0; it < h.iterations; ++it) {
        trace(it, 0) = it + 1;
        trace(it, 1) = h.delta_mu[static_cast<std::size_t>(it)];
        trace.row(it).tail(n2) = h.theta_trace[static_cast<std::size_t>(it)].transpose();
    }
    io::write_csv(c.out / "vb_trace.csv", trace_header(p.basis.size()), trace);
    write_timing(c.out / "vb_timing.csv", "vb", secs, h.iterations);

    // q*(theta_k) on the integration grid at the final state.
    Eigen::MatrixXd density(n2, c.config.vb.theta_intervals + 1);
    for (Eigen::Index k = 0; k < n2; ++k) {
        const auto g = vb::group_posterior(res.state, *p.gps, obs, c.config.vb, static_cast<std::size_t>(k));
        Eigen::VectorXd q = g.log_q.array().exp();
        density.row(k) = (q / g.grid.weights.dot(q)).transpose();
    }

    const auto [mean, var] = vb::posterior_log_kappa(res.state, p.basis);
    io::ArrayFile f;
    f.put("theta_mean", res.state.theta_mean);
    f.put("theta_var", res.state.theta_var);
    f.put("a_mean", res.state.a_mean);
    f.put("a_var", res.state.a_var);
    f.put("log_kappa_mean", mean);
    f.put("log_kappa_var", var);
    f.put("theta_density_grid", Eigen::VectorXd(vb::group_posterior(res.state, *p.gps, obs, c.config.vb, 0).grid.points));
    f.put("theta_density", density);
    f.put("delta_mu", Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(h.delta_mu.data(), static_cast<Eigen::Index>(h.delta_mu.size()))));
    f.put("converged", h.converged ? 1.0 : 0.0);
    f.put("seconds", secs);
    std::cout << "VB: " << h.iterations << " iterations, " << (h.converged ? "converged" : "NOT converged") << ", "
              << secs << " s\nE theta = " << res.state.theta_mean.transpose() << '\n';
    save_artifact(c, f, "vb.sepuq");
}

void cmd_invert_mcmc(const Context& c)
{
    const auto p = load_pipeline(c);
    const auto obs = load_observations(c, p);
    auto mc = c.config.mcmc;
    mc.seed = ex::chain_seed(c.config);
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = mcmc::run_chain(*p.gps, obs, mc);
    const double secs = elapsed(t0);

    const auto n2 = static_cast<Eigen::Index>(p.basis.size());
    Eigen::MatrixXd trace(static_cast<Eigen::Index>(res.trace.size()), 2 + n2);
    for (std::size_t r = 0; r < res.trace.size(); ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        trace(ri, 0) = static_cast<double>(res.trace_sweep[r]);
        trace(ri, 1) = r == 0 ? 0.0 : (res.trace[r] - res.trace[r - 1]).norm();
        trace.row(ri).tail(n2) = res.trace[r].transpose();
    }
    io::write_csv(c.out / "mcmc_trace.csv", trace_header(p.basis.size()), trace);
    write_timing(c.out / "mcmc_timing.csv", "mcmc", secs, static_cast<double>(mc.iterations));

    const auto [mean, var] = mcmc::posterior_log_kappa(res, p.basis);
    io::ArrayFile f;
    f.put("samples", res.samples);
    f.put("theta_mean", res.theta_mean);
    f.put("theta_std", res.theta_std);
    f.put("theta_acceptance", res.theta_acceptance);
    f.put("a_acceptance", res.a_acceptance);
    f.put("log_kappa_mean", mean);
    f.put("log_kappa_var", var);
    f.put("seconds_per_sweep", res.seconds_per_sweep);
    std::string warnings;
    for (const auto& w : res.warnings) warnings += w + '\n';
    f.put_text("warnings", warnings);
    std::cout << "MCMC: " << mc.iterations << " sweeps, " << secs << " s\nE theta = " << res.theta_mean.transpose()
              << "\nacceptance (theta) = " << res.theta_acceptance.transpose() << '\n';
    for (const auto& w : res.warnings) std::cout << "warning: " << w << '\n';
    save_artifact(c, f, "mcmc.sepuq");
}

void cmd_report(const Context& c)
{
    const auto p = load_pipeline(c);
    auto data = load_artifact(c, "data.sepuq", "gen-data");
    const bool have_vb = fs::exists(c.out / "vb.sepuq");
    const bool have_mcmc = fs::exists(c.out / "mcmc.sepuq");
    if (!have_vb && !have_mcmc) {
        throw ValidationError("no inversion results in " + c.out.string() + "; run `sepuq invert-vb` and/or `sepuq invert-mcmc`");
    }
    const auto obs = load_observations(c, p);
    const fem::Field ref = data.vector("log_kappa_ref");
    io::write_csv(c.out / "field_reference.csv", {}, ex::field_grid(p.mesh, ref));

    std::ostringstream rep;
    rep << std::setprecision(6);
    rep << "config " << c.hash << "\nprofile " << c.config.profile << ", mesh " << c.config.nx << "x" << c.config.ny
        << ", N2 = " << c.config.n2 << ", N1 = " << c.config.n1 << ", M = " << obs.size() << "\n\n";
    rep << "theta_ref = " << data.vector("theta_ref").transpose() << "\n\n";

    const double fem_s = ex::fem_solve_seconds(p, 5);
    std::ostringstream timing;
    timing << std::setprecision(6) << "method,total_seconds,iterations,seconds_per_iteration\n";
    timing << "fem_solve," << fem_s << ",1," << fem_s << '\n';

    auto summarize = [&](const std::string& method, const io::ArrayFile& f) {
        const Eigen::VectorXd theta = f.vector("theta_mean");
        const fem::Field mean = f.vector("log_kappa_mean");
        io::write_csv(c.out / ("field_" + method + "_mean.csv"), {}, ex::field_grid(p.mesh, mean));
        io::write_csv(c.out / ("field_" + method + "_var.csv"), {}, ex::field_grid(p.mesh, f.vector("log_kappa_var")));
        rep << method << ": E theta = " << theta.transpose() << '\n';
        rep << "  relative L2 error of E ln kappa: " << ex::field_error(p.mesh, mean, ref) << '\n';
        rep << "  misfit ||y - F(E mu)|| / sqrt(M) = " << ex::fem_misfit(p, theta, obs) << " (sigma_y = " << obs.sigma_y
            << ")\n";
        std::ifstream t(c.out / (method + "_timing.csv"));
        std::string line;
        std::getline(t, line);
        if (std::getline(t, line)) timing << line << '\n';
    };

    if (have_vb) {
        auto f = load_artifact(c, "vb.sepuq", "invert-vb");
        summarize("vb", f);
        rep << "  converged: " << (f.scalar("converged") != 0.0 ? "yes" : "no") << '\n';
        const Eigen::VectorXd grid = f.vector("theta_density_grid");
        const Eigen::MatrixXd dens = f.matrix("theta_density");
        Eigen::MatrixXd rows(grid.size(), 1 + dens.rows());
        rows.col(0) = grid;
        rows.rightCols(dens.rows()) = dens.transpose();
        std::vector<std::string> h = {"theta"};
        for (Eigen::Index k = 0; k < dens.rows(); ++k) h.push_back("q_theta_" + std::to_string(k + 1));
        io::write_csv(c.out / "vb_theta_density.csv", h, rows);
    } else {
        rep << "vb: no results (run `sepuq invert-vb`)\n";
    }
    if (have_mcmc) {
        auto f = load_artifact(c, "mcmc.sepuq", "invert-mcmc");
        summarize("mcmc", f);
        rep << "  theta acceptance: " << f.vector("theta_acceptance").transpose() << '\n';
        if (!f.text("warnings").empty()) rep << "  warnings:\n" << f.text("warnings");
        const Eigen::MatrixXd s = f.matrix("samples");
        const int bins = 40;
        Eigen::MatrixXd hist = Eigen::MatrixXd::Zero(bins, 1 + s.cols());
        const double w = (c.config.theta_max - c.config.theta_min) / bins;
        for (int b = 0; b < bins; ++b) hist(b, 0) = c.config.theta_min + (b + 0.5) * w;
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            for (Eigen::Index k = 0; k < s.cols(); ++k) {
                const int b = std::clamp(static_cast<int>((s(r, k) - c.config.theta_min) / w), 0, bins - 1);
                hist(b, 1 + k) += 1.0 / (s.rows() * w);
            }
        }
        std::vector<std::string> h = {"theta"};
        for (Eigen::Index k = 0; k < s.cols(); ++k) h.push_back("density_theta_" + std::to_string(k + 1));
        io::write_csv(c.out / "mcmc_theta_histogram.csv", h, hist);
    } else {
        rep << "mcmc: no results (run `sepuq invert-mcmc`); the comparison covers VB only\n";
    }
    std::ofstream(c.out / "timing.csv") << timing.str();
    rep << "\ntiming\n" << timing.str();
    std::ofstream(c.out / "report.txt") << rep.str();
    std::cout << rep.str();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Separable surrogate and Bayesian inversion for -div(kappa grad u) = f"};
    app.require_subcommand(1);
    Options opt;
    app.add_option("--config", opt.config_path, "JSON config; keys override the profile")->check(CLI::ExistingFile);
    app.add_option("--seed", opt.seed, "Base seed (reference, noise, benchmark and chain seeds derive from it)");
    app.add_option("--out", opt.out, "Artifact directory")->capture_default_str();
    app.add_option("--profile", opt.profile, "Base settings")->check(CLI::IsMember({"ci", "paper"}))->capture_default_str();

    struct Sub
    {
        const char* name;
        const char* help;
        void (*run)(const Context&);
    };
    const Sub subs[] = {
        {"kle-build", "Build the truncated KL basis", cmd_kle_build},
        {"pgd-build", "Build the separable surrogate", cmd_pgd_build},
        {"forward-bench", "Compare surrogate and FEM on prior samples", cmd_forward_bench},
        {"gen-data", "Draw a reference field and noisy observations", cmd_gen_data},
        {"invert-vb", "Variational Bayes inversion", cmd_invert_vb},
        {"invert-mcmc", "MCMC inversion", cmd_invert_mcmc},
        {"report", "Summaries, field grids, histograms and timing", cmd_report},
    };
    void (*selected)(const Context&) = nullptr;
    for (const auto& s : subs) {
        auto* sc = app.add_subcommand(s.name, s.help);
        sc->callback([&selected, run = s.run] { selected = run; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        selected(make_context(opt));
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
