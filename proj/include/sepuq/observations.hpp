#ifndef SEPUQ_OBSERVATIONS_HPP
#define SEPUQ_OBSERVATIONS_HPP

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "sepuq/mesh_fem.hpp"
#include "sepuq/pgd_forward.hpp"

namespace sepuq {

// Point data y at fixed locations, with the surrogate's spatial modes sampled there.
struct ObservationSet
{
    std::vector<fem::Point> locations;
    Eigen::VectorXd values; // y, length M
    double sigma_y = 1.0;
    Eigen::MatrixXd modes;  // M x N1, column i is V_i

    std::size_t size() const noexcept { return static_cast<std::size_t>(values.size()); }
    std::size_t num_terms() const noexcept { return static_cast<std::size_t>(modes.cols()); }
};

ObservationSet make_observations(const fem::GridMesh& mesh, const pgd::SeparableSolution& sol,
                                 std::vector<fem::Point> locations, Eigen::VectorXd values, double sigma_y);

// Independent N(theta0, sigma0^2) prior on every KL coefficient.
struct ThetaPrior
{
    double theta0 = 0.0;
    double sigma0 = 1.0;
};

} // namespace sepuq

#endif
