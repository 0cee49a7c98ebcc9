#ifndef SEPUQ_THETA_GRID_HPP
#define SEPUQ_THETA_GRID_HPP

#include <cstddef>

#include <Eigen/Core>

namespace sepuq {

// Evenly spaced points on [lo, hi] with composite trapezoid weights.
struct ThetaGrid
{
    double lo = -5.0;
    double hi = 5.0;
    Eigen::VectorXd points;
    Eigen::VectorXd weights;

    static ThetaGrid uniform(double lo, double hi, std::size_t n);
    // Same points; trapezoid weights multiplied by the N(mean, sd^2) density.
    static ThetaGrid gaussian(double lo, double hi, std::size_t n, double mean, double sd);

    std::size_t size() const noexcept { return static_cast<std::size_t>(points.size()); }
    double spacing() const noexcept { return (hi - lo) / static_cast<double>(size() - 1); }
    bool contains(double theta) const noexcept { return theta >= lo && theta <= hi; }

    // Piecewise-linear interpolation of grid values at theta (inside [lo, hi]).
    double interpolate(const Eigen::Ref<const Eigen::VectorXd>& values, double theta) const;
    // Index of the grid point closest to theta, clamped to the grid.
    std::size_t nearest(double theta) const noexcept;
};

} // namespace sepuq

#endif
