#include <cmath>
#include <memory>
#include <random>

#include <Eigen/Dense>
#include <doctest.h>

#include "sepuq/errors.hpp"
#include "sepuq/gp_surrogate.hpp"

using namespace sepuq;

namespace {

const gp::GPHyper hyper{1.0, 1e-3, 1.0};

Eigen::VectorXd smooth_targets(const ThetaGrid& g)
{
    return (0.3 * g.points.array()).sin() + 0.004 * g.points.array().square();
}

} // namespace

TEST_CASE("zero targets predict zero")
{
    const auto grid = ThetaGrid::uniform(-5, 5, 21);
    const auto m = gp::fit(grid, Eigen::VectorXd::Zero(21), hyper);
    for (double x : {-7.0, -1.3, 0.0, 2.2, 9.0}) CHECK(m.predict(x).mean == 0.0);
}

TEST_CASE("single training point")
{
    const gp::GPHyper h{1.5, 0.2, 0.7};
    auto factor = std::make_shared<const gp::KernelFactor>(Eigen::VectorXd::Constant(1, 0.4), h);
    const gp::GPModel m(factor, Eigen::VectorXd::Constant(1, 2.0));
    for (double x : {-1.0, 0.4, 1.1}) {
        const double k = h.sigma_a * h.sigma_a * std::exp(-(x - 0.4) * (x - 0.4) / (2 * h.length * h.length));
        const double s = h.sigma_a * h.sigma_a + h.sigma_1 * h.sigma_1;
        CHECK(m.predict(x).mean == doctest::Approx(k * 2.0 / s).epsilon(1e-13));
        CHECK(m.predict(x).variance == doctest::Approx(h.sigma_a * h.sigma_a - k * k / s + h.sigma_1 * h.sigma_1).epsilon(1e-13));
    }
}

TEST_CASE("training points are matched to the noise floor")
{
    const auto grid = ThetaGrid::uniform(-5, 5, 21);
    const Eigen::VectorXd z = smooth_targets(grid);
    const auto m = gp::fit(grid, z, hyper);
    for (std::size_t q = 0; q < grid.size(); ++q) {
        const auto p = m.predict(grid.points[q]);
        CHECK(std::abs(p.mean - z[q]) <= 3e-3);
        CHECK(p.variance >= hyper.sigma_1 * hyper.sigma_1);
    }
    const auto far = m.predict(1e3);
    CHECK(std::abs(far.mean) <= 1e-12);
    CHECK(far.variance == doctest::Approx(1.0 + 1e-6).epsilon(1e-12));
}

TEST_CASE("batch prediction against a dense solve")
{
    const auto grid = ThetaGrid::uniform(-5, 5, 21);
    const Eigen::VectorXd z = smooth_targets(grid);
    const auto m = gp::fit(grid, z, hyper);
    const auto n = grid.points.size();
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) k(i, j) = std::exp(-0.5 * std::pow(grid.points[i] - grid.points[j], 2));
    k.diagonal().array() += 1e-6;
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
    for (double x : {-4.7, -2.05, 0.33, 1.0, 4.99}) {
        Eigen::VectorXd ks(n);
        for (Eigen::Index i = 0; i < n; ++i) ks[i] = std::exp(-0.5 * std::pow(x - grid.points[i], 2));
        const double mean = ks.dot(lu.solve(z));
        const double var = 1.0 - ks.dot(lu.solve(ks)) + 1e-6;
        CHECK(std::abs(m.predict(x).mean - mean) <= 1e-10);
        CHECK(std::abs(m.predict(x).variance - var) <= 1e-10);
    }
}

TEST_CASE("variance bounds, permutation invariance, linearity")
{
    const auto grid = ThetaGrid::uniform(-5, 5, 21);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> d(-8.0, 8.0);
    const Eigen::VectorXd z1 = smooth_targets(grid);
    const Eigen::VectorXd z2 = Eigen::VectorXd::Random(21);
    const auto m1 = gp::fit(grid, z1, hyper);
    const auto m2 = gp::fit(grid, z2, hyper);
    const auto m12 = gp::fit(grid, z1 + z2, hyper);

    Eigen::VectorXi perm(21);
    for (int i = 0; i < 21; ++i) perm[i] = (8 * i) % 21;
    Eigen::VectorXd xp(21), zp(21);
    for (int i = 0; i < 21; ++i) {
        xp[i] = grid.points[perm[i]];
        zp[i] = z1[perm[i]];
    }
    const gp::GPModel mp(std::make_shared<const gp::KernelFactor>(xp, hyper), zp);

    for (int s = 0; s < 200; ++s) {
        const double x = d(rng);
        const auto p = m1.predict(x);
        CHECK(p.variance >= 1e-6 * (1 - 1e-9));
        CHECK(p.variance <= 1.0 + 1e-6 + 1e-12);
        CHECK(std::abs(mp.predict(x).mean - p.mean) <= 1e-9);
        CHECK(std::abs(m12.predict(x).mean - p.mean - m2.predict(x).mean) <= 1e-9);
    }
}

TEST_CASE("bank predictions match the per-pair models")
{
    const auto grid = ThetaGrid::uniform(-5, 5, 21);
    std::vector<Eigen::MatrixXd> tables(3, Eigen::MatrixXd(2, 21));
    for (auto& t : tables) t.setRandom();
    const gp::GPBank bank(grid, tables, hyper);
    CHECK(bank.num_terms() == 3);
    CHECK(bank.num_params() == 2);
    Eigen::VectorXd means(3);
    for (std::size_t j = 0; j < 2; ++j) {
        const double var = bank.predict_column(j, 0.77, means);
        for (std::size_t i = 0; i < 3; ++i) {
            const auto ref = gp::fit(grid, tables[i].row(static_cast<Eigen::Index>(j)).transpose(), hyper).predict(0.77);
            CHECK(std::abs(means[static_cast<Eigen::Index>(i)] - ref.mean) <= 1e-10);
            CHECK(std::abs(var - ref.variance) <= 1e-12);
            CHECK(std::abs(bank.predict(i, j, 0.77).mean - ref.mean) <= 1e-10);
        }
    }
}

TEST_CASE("invalid hyperparameters")
{
    const auto grid = ThetaGrid::uniform(-5, 5, 21);
    CHECK_THROWS_AS(gp::fit(grid, Eigen::VectorXd::Zero(21), {0.0, 1e-3, 1.0}), ValidationError);
    CHECK_THROWS_AS(gp::fit(grid, Eigen::VectorXd::Zero(21), {1.0, 1e-3, -1.0}), ValidationError);
    CHECK_THROWS_AS(gp::fit(grid, Eigen::VectorXd::Zero(20), hyper), ValidationError);
}
