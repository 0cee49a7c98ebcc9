#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <doctest.h>

#include "sepuq/errors.hpp"
#include "sepuq/kle_field.hpp"
#include "sepuq/pgd_forward.hpp"

using namespace sepuq;
using fem::Field;

namespace {

const ThetaGrid grid21 = ThetaGrid::uniform(-5, 5, 21);

Field ones(const fem::GridMesh& m) { return Field::Ones(m.num_nodes()); }

Field fem_solution(const fem::GridMesh& m, const kle::KLBasis& basis, const Eigen::VectorXd& theta)
{
    return fem::solve(fem::assemble(m, kle::kappa(basis, theta), ones(m)));
}

pgd::EnrichOptions options(std::size_t terms)
{
    pgd::EnrichOptions o;
    o.max_terms = terms;
    return o;
}

} // namespace

TEST_SUITE("theta grid")
{
    TEST_CASE("uniform grid: points, trapezoid weights, lookup")
    {
        CHECK(grid21.size() == 21);
        CHECK(grid21.points[0] == -5.0);
        CHECK(grid21.points[20] == 5.0);
        CHECK(grid21.points[10] == 0.0);
        CHECK(grid21.weights.sum() == doctest::Approx(10.0).epsilon(1e-14));
        CHECK(grid21.weights[0] == 0.25);
        CHECK(grid21.weights[1] == 0.5);
        CHECK(grid21.nearest(0.26) == 11);
        CHECK(grid21.nearest(-9.0) == 0);
        CHECK(grid21.nearest(9.0) == 20);
        const Eigen::VectorXd lin = 3.0 * grid21.points.array() - 1.0;
        for (double t : {-5.0, -1.3, 0.1, 4.99, 5.0}) CHECK(grid21.interpolate(lin, t) == doctest::Approx(3.0 * t - 1.0).epsilon(1e-14));
        CHECK_THROWS_AS(grid21.interpolate(lin, 5.01), ValidationError);
        CHECK_THROWS_AS(ThetaGrid::uniform(1, 1, 5), ValidationError);
        CHECK_THROWS_AS(ThetaGrid::uniform(-1, 1, 1), ValidationError);
    }

    TEST_CASE("prior-weighted grid")
    {
        const auto g = ThetaGrid::gaussian(-5, 5, 21, 0.0, 1.0);
        CHECK(g.points == grid21.points);
        for (Eigen::Index q = 0; q < 21; ++q) {
            const double x = grid21.points[q];
            CHECK(g.weights[q] == doctest::Approx(grid21.weights[q] * std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-14));
        }
        // Total mass 1 - 2 Phi(-5) up to the endpoint term h^2/12 (f'(5) - f'(-5)).
        const double end = 0.25 / 12.0 * 10.0 * std::exp(-12.5) / std::sqrt(2.0 * std::numbers::pi);
        CHECK(std::abs(g.weights.sum() - std::erf(5.0 / std::sqrt(2.0)) + end) <= 5e-8);
        CHECK(std::abs(g.weights.dot(g.points.array().square().matrix()) - 1.0) <= 1e-4);
        const auto s = ThetaGrid::gaussian(-5, 5, 21, 1.0, 0.5);
        CHECK(std::abs(s.weights.dot(s.points) / s.weights.sum() - 1.0) <= 1e-6);
        CHECK_THROWS_AS(ThetaGrid::gaussian(-5, 5, 21, 0.0, 0.0), ValidationError);
    }
}

TEST_SUITE("kappa_moment_field")
{
    TEST_CASE("flat modes and unit rows integrate the box volume")
    {
        const auto mesh = fem::build_mesh(4, 4);
        const auto basis = kle::KLBasis::from_modes(Eigen::MatrixXd::Zero(mesh.num_nodes(), 3));
        const Eigen::MatrixXd a = Eigen::MatrixXd::Ones(3, 21);
        const Field k = pgd::kappa_moment_field(basis, grid21, a, a);
        CHECK((k.array() - 1000.0).abs().maxCoeff() <= 1e-9);
    }

    TEST_CASE("one parameter against direct trapezoid quadrature")
    {
        const auto mesh = fem::build_mesh(10, 10);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 1);
        const Eigen::MatrixXd a = Eigen::MatrixXd::Random(1, 21);
        const Field k = pgd::kappa_moment_field(basis, grid21, a, a);
        std::mt19937_64 rng(1);
        std::uniform_int_distribution<std::size_t> pick(0, mesh.num_nodes() - 1);
        for (int s = 0; s < 5; ++s) {
            const auto n = pick(rng);
            double ref = 0.0;
            for (int q = 0; q <= 20; ++q) {
                const double alpha = -5.0 + 0.5 * q;
                const double w = (q == 0 || q == 20) ? 0.25 : 0.5;
                ref += w * std::exp(alpha * basis.modes(n, 0)) * a(0, q) * a(0, q);
            }
            CHECK(std::abs(k[n] - ref) <= 1e-12 * std::abs(ref));
        }
    }

    TEST_CASE("squared rows give a positive field; a skipped coordinate is held fixed")
    {
        const auto mesh = fem::build_mesh(8, 8);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 3);
        const Eigen::MatrixXd a = Eigen::MatrixXd::Random(3, 21);
        CHECK(pgd::kappa_moment_field(basis, grid21, a, a).minCoeff() > 0.0);

        const Eigen::MatrixXd b = Eigen::MatrixXd::Random(3, 21);
        const Field sliced = pgd::kappa_moment_field(basis, grid21, a, b, 1, 0.7);
        Field ref = (0.7 * basis.modes.col(1).array()).exp();
        for (int j : {0, 2}) {
            Field f = Field::Zero(mesh.num_nodes());
            for (int q = 0; q < 21; ++q)
                f.array() += grid21.weights[q] * a(j, q) * b(j, q) * (grid21.points[q] * basis.modes.col(j).array()).exp();
            ref.array() *= f.array();
        }
        CHECK((sliced - ref).cwiseAbs().maxCoeff() <= 1e-12 * ref.cwiseAbs().maxCoeff());
        CHECK_THROWS_AS(pgd::kappa_moment_field(basis, grid21, a, b, 1), ValidationError);
        CHECK_THROWS_AS(pgd::kappa_moment_field(basis, grid21, a, b, 3, 0.0), ValidationError);
    }
}

TEST_SUITE("spatial and parametric modes")
{
    TEST_CASE("no parameters: the spatial mode is the plain FEM solution")
    {
        const auto mesh = fem::build_mesh(12, 12);
        const auto basis = kle::KLBasis::from_modes(Eigen::MatrixXd::Zero(mesh.num_nodes(), 0));
        pgd::PgdBuilder b(mesh, basis, grid21, ones(mesh));
        b.start_term();
        const Field v = b.solve_spatial_mode();
        const Field u = fem::solve(fem::assemble(mesh, ones(mesh), ones(mesh)));
        CHECK((v - u).norm() <= 1e-9 * u.norm());
    }

    TEST_CASE("flat modes: the first spatial mode is the deterministic solution")
    {
        const auto mesh = fem::build_mesh(12, 12);
        const auto basis = kle::KLBasis::from_modes(Eigen::MatrixXd::Zero(mesh.num_nodes(), 2));
        pgd::PgdBuilder b(mesh, basis, grid21, ones(mesh));
        b.start_term();
        const Field v = b.solve_spatial_mode();
        const Field u = fem::solve(fem::assemble(mesh, ones(mesh), ones(mesh)));
        CHECK((v - u).norm() <= 1e-9 * u.norm());
    }

    TEST_CASE("the spatial mode satisfies its Galerkin system")
    {
        const auto mesh = fem::build_mesh(10, 10);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 2);
        pgd::PgdBuilder b(mesh, basis, grid21, ones(mesh));
        b.start_term();
        pgd::SeparableTerm t = b.working();
        t.a = Eigen::MatrixXd::Random(2, 21).array() + 1.5;
        b.set_working(t);
        const Field v = b.solve_spatial_mode();
        const pgd::ParametricKernel kernel(basis, grid21);
        const Field load = kernel.mean_product(t.a) * fem::load_vector(mesh, ones(mesh));
        const Field r = fem::apply_stiffness(mesh, kernel.moment(t.a, t.a), v) - load;
        double rmax = 0.0;
        for (auto n : mesh.free_nodes()) rmax = std::max(rmax, std::abs(r[n]));
        CHECK(rmax <= 1e-9 * load.cwiseAbs().maxCoeff());
    }

    TEST_CASE("a coordinate the field does not depend on gives a constant row")
    {
        const auto mesh = fem::build_mesh(10, 10);
        auto kl = kle::build_kl_basis(mesh, {0.2, 0.1}, 2);
        Eigen::MatrixXd modes = kl.modes;
        modes.col(1).setZero();
        const auto basis = kle::KLBasis::from_modes(modes);
        pgd::PgdBuilder b(mesh, basis, grid21, ones(mesh));
        b.start_term();
        b.solve_spatial_mode();
        b.update_parametric_mode(0);
        const Eigen::VectorXd row = b.update_parametric_mode(1);
        CHECK((row.array() - row[0]).abs().maxCoeff() <= 1e-12 * std::abs(row[0]));
    }

    TEST_CASE("one parameter, one term: pointwise minimizer against dense solves")
    {
        const auto mesh = fem::build_mesh(10, 10);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 1);
        pgd::PgdBuilder b(mesh, basis, grid21, ones(mesh));
        b.start_term();
        const Field v = b.solve_spatial_mode();
        const Eigen::VectorXd row = b.update_parametric_mode(0);
        // For each alpha: minimize 1/2 a^2 v'A(kappa(alpha))v - a <f, v>.
        for (int q = 0; q < 21; ++q) {
            const auto sys = fem::assemble(mesh, kle::kappa(basis, Eigen::VectorXd::Constant(1, grid21.points[q])), ones(mesh));
            const Eigen::MatrixXd a = Eigen::MatrixXd(sys.matrix);
            Eigen::VectorXd vf(a.rows());
            for (Eigen::Index i = 0; i < a.rows(); ++i) vf[i] = v[sys.free_nodes[i]];
            const double ref = sys.load.dot(vf) / vf.dot(a * vf);
            CHECK(std::abs(row[q] - ref) <= 1e-10 * std::abs(ref));
        }
    }

    TEST_CASE("scaling v scales the parametric row inversely")
    {
        const auto mesh = fem::build_mesh(10, 10);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 2);
        pgd::PgdBuilder b(mesh, basis, grid21, ones(mesh));
        b.start_term();
        b.solve_spatial_mode();
        const pgd::SeparableTerm t = b.working();
        const Eigen::VectorXd r1 = b.update_parametric_mode(1);
        pgd::SeparableTerm scaled = t;
        scaled.v *= 3.5;
        b.set_working(scaled);
        const Eigen::VectorXd r2 = b.update_parametric_mode(1);
        CHECK((3.5 * r2 - r1).cwiseAbs().maxCoeff() <= 1e-12 * r1.cwiseAbs().maxCoeff());
    }
}

TEST_SUITE("residual ledger")
{
    TEST_CASE("empty ledger is the load functional; application is additive in the terms")
    {
        const auto mesh = fem::build_mesh(8, 8);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 2);
        auto kernel = std::make_shared<const pgd::ParametricKernel>(basis, grid21);
        const Field load = fem::load_vector(mesh, ones(mesh));
        auto random_term = [&] {
            pgd::SeparableTerm t{Field::Random(mesh.num_nodes()), Eigen::MatrixXd::Random(2, 21)};
            for (auto n : mesh.boundary_nodes()) t.v[n] = 0.0;
            return t;
        };
        const auto test = random_term(), t1 = random_term(), t2 = random_term();

        const pgd::ResidualLedger empty(mesh, kernel, load);
        const double mean = test.a.row(0).dot(grid21.weights) * test.a.row(1).dot(grid21.weights);
        CHECK(pgd::residual_ledger_apply(empty, test) == doctest::Approx(mean * load.dot(test.v)).epsilon(1e-13));

        pgd::ResidualLedger l1(mesh, kernel, load), l2(mesh, kernel, load), l12(mesh, kernel, load);
        l1.push(t1);
        l2.push(t2);
        l12.push(t1);
        l12.push(t2);
        const double e = empty.apply(test);
        const double both = e - l12.apply(test);
        const double sum = (e - l1.apply(test)) + (e - l2.apply(test));
        CHECK(both == doctest::Approx(sum).epsilon(1e-12));
    }

    TEST_CASE("the residual is orthogonal to the variations of each accepted term")
    {
        const auto mesh = fem::build_mesh(10, 10);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 2);
        auto opt = options(3);
        opt.tol_a = opt.tol_v = 1e-10;
        opt.max_sweeps = 200;
        pgd::PgdBuilder b(mesh, basis, grid21, ones(mesh), opt);
        std::mt19937_64 rng(3);
        for (int n = 0; n < 3; ++n) {
            const auto d = b.enrich_one();
            REQUIRE(d.converged);
            const auto& tn = b.ledger().terms().back();
            // a_n (x) dv for a random spatial direction, and a (x) v_n with one row perturbed.
            pgd::SeparableTerm dv{Field::Random(mesh.num_nodes()), tn.a};
            for (auto node : mesh.boundary_nodes()) dv.v[node] = 0.0;
            pgd::SeparableTerm da{tn.v, tn.a};
            da.a.row(n % 2) = Eigen::RowVectorXd::Random(21);
            const double scale_v = std::sqrt(b.ledger().inner(dv, dv) * d.term_norm_sq);
            const double scale_a = std::sqrt(b.ledger().inner(da, da) * d.term_norm_sq);
            CHECK(std::abs(b.ledger().apply(dv)) <= 1e-6 * scale_v);
            CHECK(std::abs(b.ledger().apply(da)) <= 1e-6 * scale_a);
        }
    }
}

TEST_SUITE("enrich")
{
    TEST_CASE("zero source gives no terms")
    {
        const auto mesh = fem::build_mesh(8, 8);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 2);
        const auto sol = pgd::enrich(mesh, basis, grid21, Field::Zero(mesh.num_nodes()), options(5));
        CHECK(sol.num_terms() == 0);
    }

    TEST_CASE("energy decay identities and normalization")
    {
        const auto mesh = fem::build_mesh(15, 15);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 3);
        const auto sol = pgd::enrich(mesh, basis, grid21, ones(mesh), options(8));
        REQUIRE(sol.num_terms() == 8);
        double prev_drop = std::numeric_limits<double>::infinity();
        for (const auto& d : sol.diagnostics) {
            CHECK(d.energy <= 0.0);
            CHECK(d.residual_drop >= 0.0);
            CHECK(std::abs(d.residual_drop - d.term_norm_sq) <= 1e-6 * d.term_norm_sq);
            CHECK(d.energy == doctest::Approx(-0.5 * d.term_norm_sq).epsilon(1e-6));
            prev_drop = d.residual_drop;
        }
        CHECK(prev_drop < sol.diagnostics.front().residual_drop);
        for (const auto& t : sol.terms) {
            CHECK(t.a.allFinite());
            for (Eigen::Index j = 0; j < t.a.rows(); ++j) CHECK(t.a.row(j).cwiseAbs().maxCoeff() == doctest::Approx(1.0).epsilon(1e-15));
        }
    }

    TEST_CASE("energy identities under the prior-weighted measure")
    {
        const auto mesh = fem::build_mesh(12, 12);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 3);
        const auto sol = pgd::enrich(mesh, basis, ThetaGrid::gaussian(-5, 5, 21, 0.0, 1.0), ones(mesh), options(6));
        REQUIRE(sol.num_terms() == 6);
        for (const auto& d : sol.diagnostics) {
            CHECK(d.energy <= 0.0);
            CHECK(std::abs(d.residual_drop - d.term_norm_sq) <= 1e-6 * d.term_norm_sq);
        }
    }

    TEST_CASE("deterministic")
    {
        const auto mesh = fem::build_mesh(10, 10);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 2);
        const auto s1 = pgd::enrich(mesh, basis, grid21, ones(mesh), options(4));
        const auto s2 = pgd::enrich(mesh, basis, grid21, ones(mesh), options(4));
        REQUIRE(s1.num_terms() == s2.num_terms());
        for (std::size_t i = 0; i < s1.num_terms(); ++i) {
            CHECK(s1.terms[i].v == s2.terms[i].v);
            CHECK(s1.terms[i].a == s2.terms[i].a);
        }
    }

    TEST_CASE("three parameters on a small mesh: every grid tensor point within 2%")
    {
        const auto mesh = fem::build_mesh(10, 10);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 3);
        const auto grid = ThetaGrid::uniform(-5, 5, 11);
        const auto sol = pgd::enrich(mesh, basis, grid, ones(mesh), options(8));
        double worst = 0.0;
        auto l2 = [&](const Field& x) { return fem::l2_norm(mesh, x); };
        for (int i = 0; i < 11; ++i)
            for (int j = 0; j < 11; ++j)
                for (int k = 0; k < 11; ++k) {
                    const Eigen::Vector3d theta(grid.points[i], grid.points[j], grid.points[k]);
                    const Field u = fem_solution(mesh, basis, theta);
                    worst = std::max(worst, fem::relative_error(pgd::evaluate_surrogate_field(sol, theta), u, l2));
                }
        MESSAGE("max relative L2 over the 11^3 grid: " << worst);
        CHECK(worst <= 0.02);
    }
}

TEST_SUITE("evaluate")
{
    TEST_CASE("grid points reproduce the tabulated product; a unit term returns v")
    {
        const auto mesh = fem::build_mesh(6, 6);
        const auto basis = kle::KLBasis::from_modes(Eigen::MatrixXd::Zero(mesh.num_nodes(), 2));
        pgd::SeparableSolution sol;
        sol.grid = grid21;
        sol.num_params = 2;
        sol.num_nodes = mesh.num_nodes();
        sol.terms.push_back({Field::Random(mesh.num_nodes()), Eigen::MatrixXd::Ones(2, 21)});
        std::vector<fem::Point> pts = {{0.25, 0.5}, {0.9, 0.1}};
        CHECK((pgd::evaluate_surrogate(sol, mesh, Eigen::Vector2d(1.3, -2.2), pts) -
               fem::sample_at_points(mesh, sol.terms[0].v, pts)).norm() <= 1e-15);

        sol.terms[0].a.setRandom();
        sol.terms.push_back({Field::Random(mesh.num_nodes()), Eigen::MatrixXd::Random(2, 21)});
        const Eigen::VectorXd c = pgd::term_coefficients(sol, Eigen::Vector2d(grid21.points[4], grid21.points[17]));
        for (int i = 0; i < 2; ++i) CHECK(c[i] == sol.terms[i].a(0, 4) * sol.terms[i].a(1, 17));
        CHECK_THROWS_AS(pgd::evaluate_surrogate_field(sol, Eigen::Vector2d(5.5, 0.0)), ValidationError);
    }

    TEST_CASE("two parameters, random grid points, against direct FEM")
    {
        const auto mesh = fem::build_mesh(10, 10);
        const auto basis = kle::build_kl_basis(mesh, {0.2, 0.1}, 2);
        const auto sol = pgd::enrich(mesh, basis, grid21, ones(mesh), options(6));
        std::mt19937_64 rng(21);
        std::uniform_int_distribution<int> pick(0, 20);
        auto l2 = [&](const Field& x) { return fem::l2_norm(mesh, x); };
        for (int s = 0; s < 25; ++s) {
            const Eigen::Vector2d theta(grid21.points[pick(rng)], grid21.points[pick(rng)]);
            CHECK(fem::relative_error(pgd::evaluate_surrogate_field(sol, theta), fem_solution(mesh, basis, theta), l2) <= 0.01);
        }
    }
}
