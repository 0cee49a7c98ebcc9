#ifndef SEPUQ_MESH_FEM_HPP
#define SEPUQ_MESH_FEM_HPP

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

/**
 * Q1 finite elements on a uniform quadrilateral grid of the unit square,
 * homogeneous Dirichlet conditions on the whole boundary.
 *
 * Coefficients (kappa) and sources (f) are nodal fields. Inside an element
 * they are interpolated bilinearly and integrated with 2x2 Gauss quadrature,
 * which is exact for every integrand formed here. A consequence used
 * throughout the library: the stiffness matrix is linear in the nodal kappa
 * values, so v' A(kappa) w == kappa . energy_density(v, w).
 */

namespace sepuq::fem {

using Field = Eigen::VectorXd;

struct Point
{
    double x = 0.0;
    double y = 0.0;
};

class GridMesh
{
public:
    // Local node order of every element: (0,0) (1,0) (1,1) (0,1), counter-clockwise.
    using ElementNodes = std::array<std::size_t, 4>;
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    GridMesh(int nx, int ny);

    int nx() const noexcept { return nx_; }
    int ny() const noexcept { return ny_; }
    double hx() const noexcept { return hx_; }
    double hy() const noexcept { return hy_; }

    std::size_t num_nodes() const noexcept { return static_cast<std::size_t>((nx_ + 1) * (ny_ + 1)); }
    std::size_t num_elements() const noexcept { return static_cast<std::size_t>(nx_ * ny_); }

    // Row-major: node (ix, iy) has index iy * (nx + 1) + ix.
    std::size_t node_index(int ix, int iy) const noexcept;
    Point node(std::size_t n) const noexcept;
    ElementNodes element_nodes(std::size_t e) const noexcept;
    double element_area(std::size_t e) const noexcept;

    bool is_boundary(std::size_t n) const noexcept { return free_index_[n] == npos; }
    const std::vector<std::size_t>& boundary_nodes() const noexcept { return boundary_; }
    const std::vector<std::size_t>& free_nodes() const noexcept { return free_; }
    // Position of node n among the free nodes, npos for boundary nodes.
    std::size_t free_index(std::size_t n) const noexcept { return free_index_[n]; }

    // Each node's share of the domain area (lumped mass); sums to 1.
    Field lumped_weights() const;

    // K[c](a, b) = int_element N_c grad N_a . grad N_b
    const std::array<Eigen::Matrix4d, 4>& weighted_stiffness() const noexcept { return weighted_stiffness_; }
    // M(a, b) = int_element N_a N_b
    const Eigen::Matrix4d& element_mass() const noexcept { return element_mass_; }

private:
    int nx_;
    int ny_;
    double hx_;
    double hy_;
    std::vector<std::size_t> boundary_;
    std::vector<std::size_t> free_;
    std::vector<std::size_t> free_index_;
    std::array<Eigen::Matrix4d, 4> weighted_stiffness_;
    Eigen::Matrix4d element_mass_;
};

GridMesh build_mesh(int nx, int ny);

struct DirichletSystem
{
    Eigen::SparseMatrix<double> matrix;  // free x free
    Eigen::VectorXd load;                // free
    std::vector<std::size_t> free_nodes; // free position -> mesh node
    std::size_t num_nodes = 0;
};

// Stiffness for -div(kappa grad u) and load int f N_n, boundary rows/cols removed.
DirichletSystem assemble(const GridMesh& mesh, const Field& kappa, const Field& f);

// Same, but with a ready-made nodal load functional (one value per mesh node).
DirichletSystem assemble_with_load(const GridMesh& mesh, const Field& kappa, const Field& nodal_load);

// int f_h N_n for every node (boundary entries included).
Field load_vector(const GridMesh& mesh, const Field& f);

// Full nodal A(kappa) u without Dirichlet elimination.
Field apply_stiffness(const GridMesh& mesh, const Field& kappa, const Field& u);

// g with v' A(kappa) w == sum_n kappa_n g_n for any nodal kappa.
Field energy_density(const GridMesh& mesh, const Field& v, const Field& w);

struct SolveOptions
{
    double relative_tolerance = 1e-10;
    int max_iterations_per_unknown = 10;
};

// Jacobi-preconditioned CG; result is extended by zeros on the boundary.
Field solve(const DirichletSystem& system, const SolveOptions& options = {});

double energy_norm(const GridMesh& mesh, const Field& kappa, const Field& u);
double l2_norm(const GridMesh& mesh, const Field& u);

// ||u - u_ref|| / ||u_ref||; throws when ||u_ref|| == 0.
double relative_error(const Field& u, const Field& u_ref, const std::function<double(const Field&)>& norm);

// Bilinear interpolation inside the containing element.
Eigen::VectorXd sample_at_points(const GridMesh& mesh, const Field& u, std::span<const Point> points);

} // namespace sepuq::fem

#endif
