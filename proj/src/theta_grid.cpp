#include "sepuq/theta_grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "sepuq/errors.hpp"

namespace sepuq {

ThetaGrid ThetaGrid::uniform(double lo, double hi, std::size_t n)
{
    if (n < 2) throw ValidationError("theta grid needs at least 2 points");
    if (!(hi > lo)) throw ValidationError("theta grid needs hi > lo");
    ThetaGrid g;
    g.lo = lo;
    g.hi = hi;
    const auto m = static_cast<Eigen::Index>(n);
    g.points.resize(m);
    g.weights.resize(m);
    const double h = (hi - lo) / static_cast<double>(n - 1);
    for (Eigen::Index q = 0; q < m; ++q) {
        g.points[q] = (q == m - 1) ? hi : lo + static_cast<double>(q) * h;
        g.weights[q] = (q == 0 || q == m - 1) ? 0.5 * h : h;
    }
    return g;
}

ThetaGrid ThetaGrid::gaussian(double lo, double hi, std::size_t n, double mean, double sd)
{
    if (!(sd > 0.0)) throw ValidationError("theta grid density needs sd > 0");
    auto g = uniform(lo, hi, n);
    const double c = 1.0 / (sd * std::sqrt(2.0 * std::numbers::pi));
    for (Eigen::Index q = 0; q < g.points.size(); ++q) {
        const double z = (g.points[q] - mean) / sd;
        g.weights[q] *= c * std::exp(-0.5 * z * z);
    }
    return g;
}

double ThetaGrid::interpolate(const Eigen::Ref<const Eigen::VectorXd>& values, double theta) const
{
    if (!contains(theta)) {
        std::ostringstream ss;
        ss << "theta " << theta << " outside grid range [" << lo << ", " << hi << "]";
        throw ValidationError(ss.str());
    }
    const double s = (theta - lo) / spacing();
    const auto n = static_cast<double>(size());
    const double cell = std::clamp(std::floor(s), 0.0, n - 2.0);
    const auto q = static_cast<Eigen::Index>(cell);
    const double t = s - cell;
    if (t == 0.0) return values[q];
    return (1.0 - t) * values[q] + t * values[q + 1];
}

std::size_t ThetaGrid::nearest(double theta) const noexcept
{
    const double s = std::round((theta - lo) / spacing());
    return static_cast<std::size_t>(std::clamp(s, 0.0, static_cast<double>(size() - 1)));
}

} // namespace sepuq
