#include "sepuq/observations.hpp"

#include "sepuq/errors.hpp"

namespace sepuq {

ObservationSet make_observations(const fem::GridMesh& mesh, const pgd::SeparableSolution& sol,
                                 std::vector<fem::Point> locations, Eigen::VectorXd values, double sigma_y)
{
    if (static_cast<std::size_t>(values.size()) != locations.size()) {
        throw ValidationError("observation values and locations differ in count");
    }
    if (!(sigma_y > 0.0)) throw ValidationError("sigma_y must be positive");
    ObservationSet obs;
    obs.modes.resize(values.size(), static_cast<Eigen::Index>(sol.num_terms()));
    for (std::size_t i = 0; i < sol.num_terms(); ++i) {
        obs.modes.col(static_cast<Eigen::Index>(i)) = fem::sample_at_points(mesh, sol.terms[i].v, locations);
    }
    obs.locations = std::move(locations);
    obs.values = std::move(values);
    obs.sigma_y = sigma_y;
    return obs;
}

} // namespace sepuq
