#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Core>
#include <doctest.h>

#include "sepuq/array_io.hpp"
#include "sepuq/errors.hpp"
#include "sepuq/experiment.hpp"

using namespace sepuq;
namespace ex = sepuq::experiment;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name)
{
    const auto d = fs::temp_directory_path() / ("sepuq_test_" + name + "_" + std::to_string(std::random_device{}()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ex::ExperimentConfig small_config()
{
    auto c = ex::profile("ci");
    c.nx = c.ny = 10;
    c.n2 = 2;
    c.n1 = 3;
    c.pgd.max_terms = 3;
    c.benchmark_samples = 4;
    return c;
}

int run_cli(const std::string& args, const fs::path& log)
{
    const std::string cmd = std::string("\"") + SEPUQ_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
#ifdef WEXITSTATUS
    return WEXITSTATUS(status);
#else
    return status;
#endif
}

} // namespace

TEST_SUITE("config")
{
    TEST_CASE("profiles")
    {
        const auto ci = ex::profile("ci");
        CHECK(ci.nx == 25);
        CHECK(ci.n2 == 4);
        CHECK(ci.n1 == 6);
        CHECK(ci.mcmc.iterations == 10000);
        const auto paper = ex::profile("paper");
        CHECK(paper.nx == 50);
        CHECK(paper.ny == 50);
        CHECK(paper.n2 == 10);
        CHECK(paper.n1 == 10);
        CHECK(paper.mcmc.iterations == 100000);
        CHECK(paper.theta_points == 21);
        CHECK(paper.covariance.sigma_gf == 0.2);
        CHECK(paper.covariance.l0 == 0.1);
        CHECK(paper.gp.sigma_1 == 1e-3);
        CHECK(paper.theta_measure == "prior");
        CHECK_THROWS_AS(ex::profile("huge"), ValidationError);
        CHECK_NOTHROW(ex::validate(ci));
        CHECK_NOTHROW(ex::validate(paper));
    }

    TEST_CASE("JSON round trip and partial override")
    {
        auto c = ex::profile("ci");
        c.seed = 42;
        c.noise_percent = 2.5;
        c.mcmc.theta_step = 0.3;
        const auto back = ex::from_json(ex::to_json(c), ex::profile("paper"));
        CHECK(ex::to_json(back) == ex::to_json(c));
        CHECK(ex::config_hash(back) == ex::config_hash(c));

        const auto partial = ex::from_json(R"({"mesh": {"nx": 12}, "seed": 9, "theta_grid": {"min": -4}})", c);
        CHECK(partial.nx == 12);
        CHECK(partial.ny == c.ny);
        CHECK(partial.seed == 9);
        CHECK(partial.vb.theta_min == -4.0);
        CHECK(partial.mcmc.theta_min == -4.0);
        CHECK(partial.noise_percent == 2.5);
    }

    TEST_CASE("hash is stable and sensitive")
    {
        const auto c = ex::profile("ci");
        const auto h = ex::config_hash(c);
        CHECK(h.size() == 64);
        CHECK(h == ex::config_hash(ex::profile("ci")));
        auto d = c;
        d.seed += 1;
        CHECK(ex::config_hash(d) != h);
        d = c;
        d.gp.length = 1.5;
        CHECK(ex::config_hash(d) != h);
    }

    TEST_CASE("rejections")
    {
        const auto base = ex::profile("ci");
        CHECK_THROWS_AS(ex::from_json("{nope", base), ValidationError);
        CHECK_THROWS_AS(ex::from_json(R"({"mesh": {"nx": "ten"}})", base), ValidationError);
        auto c = base;
        c.observations = 10;
        CHECK_THROWS_AS(ex::validate(c), ValidationError);
        c = base;
        c.nx = 1;
        CHECK_THROWS_AS(ex::validate(c), ValidationError);
        c = base;
        c.covariance.l0 = 0.0;
        CHECK_THROWS_AS(ex::validate(c), ValidationError);
        c = base;
        c.mcmc.burn_in = c.mcmc.iterations;
        CHECK_THROWS_AS(ex::validate(c), ValidationError);
        c = base;
        c.noise_percent = 0.0;
        CHECK_THROWS_AS(ex::validate(c), ValidationError);
        c = base;
        c.gp.sigma_1 = -1.0;
        CHECK_THROWS_AS(ex::validate(c), ValidationError);
        c = base;
        c.theta_measure = "counting";
        CHECK_THROWS_AS(ex::validate(c), ValidationError);
        CHECK_THROWS_AS(ex::load_config("/nonexistent/config.json", base), ValidationError);
    }
}

TEST_SUITE("synthetic data")
{
    TEST_CASE("observation lattice")
    {
        const auto p9 = ex::observation_lattice(9);
        REQUIRE(p9.size() == 9);
        const double v[3] = {0.25, 0.5, 0.75};
        for (int iy = 0; iy < 3; ++iy)
            for (int ix = 0; ix < 3; ++ix) {
                CHECK(p9[static_cast<std::size_t>(3 * iy + ix)].x == v[ix]);
                CHECK(p9[static_cast<std::size_t>(3 * iy + ix)].y == v[iy]);
            }
        const auto p100 = ex::observation_lattice(100);
        REQUIRE(p100.size() == 100);
        CHECK(p100.front().x == doctest::Approx(1.0 / 11.0).epsilon(1e-15));
        CHECK(p100.back().y == doctest::Approx(10.0 / 11.0).epsilon(1e-15));
        for (const auto& q : p100) CHECK((q.x > 0.0 && q.x < 1.0 && q.y > 0.0 && q.y < 1.0));
        CHECK_THROWS_AS(ex::observation_lattice(0), ValidationError);
        CHECK_THROWS_AS(ex::observation_lattice(8), ValidationError);
    }

    TEST_CASE("reference draw: truncated, deterministic, consistent")
    {
        auto c = small_config();
        c.theta_min = -0.5;
        c.theta_max = 0.5;
        const auto mesh = fem::build_mesh(c.nx, c.ny);
        const auto basis = kle::build_kl_basis(mesh, c.covariance, c.n2);
        const auto r1 = ex::generate_reference(c, basis, 5);
        const auto r2 = ex::generate_reference(c, basis, 5);
        CHECK(r1.theta == r2.theta);
        CHECK(r1.theta.cwiseAbs().maxCoeff() <= 0.5);
        CHECK((r1.log_kappa - kle::log_kappa(basis, r1.theta)).norm() == 0.0);
        CHECK((r1.kappa - r1.log_kappa.array().exp().matrix()).norm() == 0.0);
        CHECK(ex::generate_reference(c, basis, 6).theta != r1.theta);
    }

    TEST_CASE("observations come from a full FEM solve; noise is one percent of the mean magnitude")
    {
        const auto c = small_config();
        const auto mesh = fem::build_mesh(c.nx, c.ny);
        const fem::Field kappa = fem::Field::Constant(static_cast<Eigen::Index>(mesh.num_nodes()), 2.0);
        const auto d = ex::generate_observations(c, mesh, kappa, 3);
        const auto u = fem::solve(fem::assemble(mesh, kappa, ex::source_field(c, mesh)), c.pgd.solver);
        CHECK((d.clean - fem::sample_at_points(mesh, u, d.locations)).norm() == 0.0);
        CHECK(d.sigma_y == doctest::Approx(0.01 * d.clean.cwiseAbs().mean()).epsilon(1e-14));
        CHECK(d.noisy != d.clean);
        const auto d2 = ex::generate_observations(c, mesh, kappa, 3);
        CHECK(d2.noisy == d.noisy);

        // Noise statistics over a large lattice.
        auto big = c;
        big.observations = 400;
        const auto db = ex::generate_observations(big, mesh, kappa, 4);
        const Eigen::VectorXd e = (db.noisy - db.clean) / db.sigma_y;
        CHECK(std::abs(e.mean()) <= 4.0 / std::sqrt(400.0));
        CHECK(std::abs(e.squaredNorm() / 400.0 - 1.0) <= 0.25);
    }

    TEST_CASE("surrogate grid follows the configured measure")
    {
        auto c = ex::profile("ci");
        const auto prior = ex::theta_grid(c);
        c.theta_measure = "lebesgue";
        const auto flat = ex::theta_grid(c);
        CHECK(flat.weights.sum() == doctest::Approx(10.0));
        CHECK(prior.weights.sum() == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(prior.points == flat.points);
        c.vb.prior.sigma0 = 2.0;
        c = ex::from_json(R"({"theta_grid": {"measure": "prior"}, "prior": {"sigma0": 2.0}})", c);
        CHECK(ex::theta_grid(c).weights[0] > prior.weights[0]);
    }

    TEST_CASE("seeds for the separate streams differ")
    {
        const auto c = ex::profile("ci");
        CHECK(ex::reference_seed(c) != ex::noise_seed(c));
        CHECK(ex::noise_seed(c) != ex::benchmark_seed(c));
        CHECK(ex::benchmark_seed(c) != ex::chain_seed(c));
    }
}

TEST_SUITE("pipeline")
{
    TEST_CASE("benchmark: snapped samples, errors consistent with summaries")
    {
        const auto c = small_config();
        const auto p = ex::build_pipeline(c);
        CHECK(p.surrogate.num_terms() >= 1);
        CHECK(p.surrogate.num_terms() <= 3);
        const auto b = ex::forward_benchmark(p, 6, 17);
        REQUIRE(b.l2_error.size() == 6);
        for (Eigen::Index s = 0; s < 6; ++s)
            for (Eigen::Index j = 0; j < 2; ++j) {
                const double t = b.thetas(s, j);
                CHECK(std::abs(t * 2.0 - std::round(t * 2.0)) <= 1e-12);
            }
        CHECK(b.mean_l2 == doctest::Approx(b.l2_error.mean()));
        CHECK(b.max_l2 == b.l2_error.maxCoeff());
        CHECK(b.l2_error.minCoeff() >= 0.0);
        CHECK(b.max_l2 < 0.2);
        const auto b2 = ex::forward_benchmark(p, 6, 17);
        CHECK(b2.l2_error == b.l2_error);
    }

    TEST_CASE("artifact round trip and shape checks")
    {
        const auto c = small_config();
        const auto p = ex::build_pipeline(c);
        const auto dir = scratch_dir("roundtrip");
        io::ArrayFile f;
        ex::put_basis(f, p.basis);
        ex::put_surrogate(f, p.surrogate);
        f.put_text("note", "hello");
        f.save(dir / "a.sepuq");
        const auto g = io::ArrayFile::load(dir / "a.sepuq");
        const auto basis = ex::get_basis(g);
        const auto sol = ex::get_surrogate(g);
        CHECK(basis.modes == p.basis.modes);
        CHECK(basis.eigenvalues == p.basis.eigenvalues);
        CHECK(g.text("note") == "hello");
        const Eigen::VectorXd theta = Eigen::Vector2d(0.5, -1.5);
        CHECK(pgd::evaluate_surrogate_field(sol, theta) == pgd::evaluate_surrogate_field(p.surrogate, theta));

        const auto q = ex::assemble_pipeline(c, basis, sol);
        CHECK(q.gps->predict(0, 1, 0.3).mean == p.gps->predict(0, 1, 0.3).mean);
        auto wrong = c;
        wrong.n2 = 3;
        CHECK_THROWS_AS(ex::assemble_pipeline(wrong, basis, sol), ValidationError);

        // Saving twice gives identical bytes.
        g.save(dir / "b.sepuq");
        CHECK(slurp(dir / "a.sepuq") == slurp(dir / "b.sepuq"));

        std::ofstream(dir / "bad.sepuq") << "NOTSEPUQ";
        CHECK_THROWS_AS(io::ArrayFile::load(dir / "bad.sepuq"), ValidationError);
        CHECK_THROWS_AS(g.matrix("missing"), ValidationError);
        fs::remove_all(dir);
    }

    TEST_CASE("csv writer")
    {
        const auto dir = scratch_dir("csv");
        Eigen::MatrixXd m(2, 2);
        m << 1.0, 0.1, -2.5, 1e-20;
        io::write_csv(dir / "t.csv", {"a", "b"}, m);
        std::ifstream in(dir / "t.csv");
        std::string line;
        std::getline(in, line);
        CHECK(line == "a,b");
        std::getline(in, line);
        CHECK(std::stod(line.substr(line.find(',') + 1)) == 0.1);
        std::getline(in, line);
        CHECK(std::stod(line.substr(line.find(',') + 1)) == 1e-20);
        fs::remove_all(dir);
    }

    TEST_CASE("field grid layout")
    {
        const auto mesh = fem::build_mesh(3, 2);
        fem::Field f(static_cast<Eigen::Index>(mesh.num_nodes()));
        for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = static_cast<double>(i);
        const auto g = ex::field_grid(mesh, f);
        CHECK(g.rows() == 3);
        CHECK(g.cols() == 4);
        CHECK(g(1, 2) == f[static_cast<Eigen::Index>(mesh.node_index(2, 1))]);
        CHECK(ex::field_error(mesh, f, f) == 0.0);
    }
}

TEST_SUITE("cli")
{
    TEST_CASE("all subcommands on a small configuration")
    {
        const auto dir = scratch_dir("cli");
        const auto out = dir / "out";
        auto c = small_config();
        c.mcmc.iterations = 3000;
        c.mcmc.burn_in = 500;
        std::ofstream(dir / "cfg.json") << ex::to_json(c);
        const std::string common = "--config \"" + (dir / "cfg.json").string() + "\" --out \"" + out.string() + "\" ";
        const auto log = dir / "log.txt";

        // Missing prerequisites are reported as a validation failure.
        CHECK(run_cli(common + "pgd-build", log) == 2);
        CHECK(slurp(log).find("kle-build") != std::string::npos);

        for (const char* cmd : {"kle-build", "pgd-build", "forward-bench", "gen-data", "invert-vb"}) {
            INFO(cmd << ": " << slurp(log));
            REQUIRE(run_cli(common + cmd, log) == 0);
        }
        for (const char* f : {"kle.sepuq", "pgd.sepuq", "data.sepuq", "vb.sepuq", "forward_bench.csv",
                              "forward_bench_summary.csv", "vb_trace.csv", "vb_timing.csv", "config.json"}) {
            CHECK_MESSAGE(fs::exists(out / f), f);
        }

        // Report without MCMC notes the gap.
        REQUIRE(run_cli(common + "report", log) == 0);
        CHECK(slurp(out / "report.txt").find("no results") != std::string::npos);

        REQUIRE(run_cli(common + "invert-mcmc", log) == 0);
        REQUIRE(run_cli(common + "report", log) == 0);
        for (const char* f : {"mcmc.sepuq", "mcmc_trace.csv", "field_reference.csv", "field_vb_mean.csv", "field_vb_var.csv",
                              "field_mcmc_mean.csv", "field_mcmc_var.csv", "vb_theta_density.csv",
                              "mcmc_theta_histogram.csv", "timing.csv"}) {
            CHECK_MESSAGE(fs::exists(out / f), f);
        }

        const auto vb = io::ArrayFile::load(out / "vb.sepuq");
        const Eigen::VectorXd dmu = vb.vector("delta_mu");
        CHECK(dmu.size() >= 1);
        CHECK((dmu.array() >= 0.0).all());
        CHECK(vb.text("config_hash") == ex::config_hash(ex::load_config(dir / "cfg.json", ex::profile("ci"))));

        // Same seed, same artifacts.
        const auto pgd_bytes = slurp(out / "pgd.sepuq");
        const auto data_bytes = slurp(out / "data.sepuq");
        REQUIRE(run_cli(common + "pgd-build", log) == 0);
        REQUIRE(run_cli(common + "gen-data", log) == 0);
        CHECK(slurp(out / "pgd.sepuq") == pgd_bytes);
        CHECK(slurp(out / "data.sepuq") == data_bytes);

        // Artifacts from another configuration are refused.
        CHECK(run_cli(common + "--seed 99 invert-vb", log) == 2);
        CHECK(slurp(log).find("config") != std::string::npos);

        // Bad input.
        std::ofstream(dir / "bad.json") << R"({"observations": {"count": 7}})";
        CHECK(run_cli("--config \"" + (dir / "bad.json").string() + "\" --out \"" + out.string() + "\" kle-build", log) == 2);
        CHECK(run_cli("--profile huge kle-build", log) == 2);
        CHECK(run_cli("", log) == 2);
        fs::remove_all(dir);
    }
}
