#ifndef SEPUQ_PGD_FORWARD_HPP
#define SEPUQ_PGD_FORWARD_HPP

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "sepuq/kle_field.hpp"
#include "sepuq/mesh_fem.hpp"
#include "sepuq/theta_grid.hpp"

/**
 * Fully separable surrogate
 *
 *     u(x, theta) ~ sum_i ( prod_j a_{i,j}(theta_j) ) v_i(x)
 *
 * built greedily: each new term minimizes the energy functional of the current
 * residual over the parameter box, by alternating a spatial solve for v_i with
 * pointwise updates of each a_{i,j} on the theta grid.
 *
 * The parametric integral is the tensor trapezoid rule on the grid with plain
 * Lebesgue measure. Because kappa = exp(sum_j theta_j phi_j) factorizes per
 * coordinate and the stiffness matrix is linear in nodal kappa, every integral
 * over the parameter box collapses to a product of one-dimensional sums at
 * each mesh node (see kappa_moment_field). The residual is kept in weak form:
 * the original load minus the bilinear-form contributions of accepted terms.
 */

namespace sepuq::pgd {

struct SeparableTerm
{
    fem::Field v;      // nodal spatial mode
    Eigen::MatrixXd a; // N2 x n_grid, a_{i,j}(alpha_q)
};

struct TermDiagnostics
{
    double energy = 0.0;         // E_n = 1/2 ||t_n||^2 - <f_{n-1}, t_n>
    double term_norm_sq = 0.0;   // ||a_n (x) v_n||^2 in the kappa-energy product
    double residual_drop = 0.0;  // ||u_{n-1}||^2 - ||u_n||^2 = 2 <f_{n-1}, t_n> - ||t_n||^2
    double residual_norm = 0.0;  // dual-norm estimate of f_n after accepting the term
    int sweeps = 0;
    bool converged = false;
};

struct SeparableSolution
{
    ThetaGrid grid;
    std::size_t num_params = 0;
    std::size_t num_nodes = 0;
    std::vector<SeparableTerm> terms;
    std::vector<TermDiagnostics> diagnostics;
    double initial_residual_norm = 0.0;

    std::size_t num_terms() const noexcept { return terms.size(); }
    // a-tables of every term, the layout gp::GPBank expects.
    std::vector<Eigen::MatrixXd> parametric_tables() const;
};

struct EnrichOptions
{
    std::size_t max_terms = 10;
    double tol_a = 1e-6;      // relative change of the a-tables per sweep
    double tol_v = 1e-6;      // relative change of v per sweep
    double tol_f = 1e-8;      // stop when residual estimate <= tol_f * initial estimate
    int max_sweeps = 50;
    // Sweeps spent on each candidate start before the best one is continued; 0 keeps a == 1 only.
    int screen_sweeps = 3;
    fem::SolveOptions solver = {};
};

// x -> prod_{j != skip} [ sum_q w_q e^{alpha_q phi_j(x)} A_j(alpha_q) B_j(alpha_q) ]
//      * (skip set ? e^{theta_skip phi_skip(x)} : 1)
fem::Field kappa_moment_field(const kle::KLBasis& basis, const ThetaGrid& grid, const Eigen::MatrixXd& rows_a,
                              const Eigen::MatrixXd& rows_b, std::optional<std::size_t> skip_j = std::nullopt,
                              std::optional<double> theta_j = std::nullopt);

// Tables e^{alpha_q phi_j(x_n)} for every parameter, shared by the builder and the ledger.
class ParametricKernel
{
public:
    ParametricKernel(const kle::KLBasis& basis, const ThetaGrid& grid);

    const ThetaGrid& grid() const noexcept { return grid_; }
    std::size_t num_params() const noexcept { return exp_.size(); }
    std::size_t num_nodes() const noexcept { return num_nodes_; }
    const Eigen::MatrixXd& exp_table(std::size_t j) const { return exp_.at(j); }

    // sum_q w_q e^{alpha_q phi_j(x)} a(alpha_q) b(alpha_q) at every node.
    fem::Field factor(std::size_t j, const Eigen::Ref<const Eigen::VectorXd>& a,
                      const Eigen::Ref<const Eigen::VectorXd>& b) const;
    // Product of factor(j, ...) over all j; nodal integral of kappa * prod_j a_j b_j.
    fem::Field moment(const Eigen::MatrixXd& rows_a, const Eigen::MatrixXd& rows_b) const;
    // prod_j sum_q w_q a_j(alpha_q)
    double mean_product(const Eigen::MatrixXd& rows) const;

private:
    ThetaGrid grid_;
    std::size_t num_nodes_;
    std::vector<Eigen::MatrixXd> exp_; // per j: nodes x n_grid
};

// The weak-form residual <f_n, .> = <f, .> - sum_{m<=n} B_kappa(term_m, .).
class ResidualLedger
{
public:
    ResidualLedger(const fem::GridMesh& mesh, std::shared_ptr<const ParametricKernel> kernel, fem::Field load);

    const std::vector<SeparableTerm>& terms() const noexcept { return terms_; }
    void push(SeparableTerm term);

    // <f_n, test> integrated over space and the parameter box.
    double apply(const SeparableTerm& test) const;
    // kappa-energy inner product of two separable functions over space x parameters.
    double inner(const SeparableTerm& s, const SeparableTerm& t) const;
    // sup over nodal hat functions of the parameter-averaged residual / ||hat||_H1.
    double dual_norm_estimate() const;

    const fem::Field& load() const noexcept { return load_; }
    const ParametricKernel& kernel() const noexcept { return *kernel_; }
    const fem::GridMesh& mesh() const noexcept { return *mesh_; }

private:
    const fem::GridMesh* mesh_;
    std::shared_ptr<const ParametricKernel> kernel_;
    fem::Field load_;
    fem::Field hat_h1_norm_;
    std::vector<SeparableTerm> terms_;
};

double residual_ledger_apply(const ResidualLedger& ledger, const SeparableTerm& test_direction);

// Alternating-minimization state for one term at a time.
class PgdBuilder
{
public:
    PgdBuilder(const fem::GridMesh& mesh, const kle::KLBasis& basis, ThetaGrid grid, const fem::Field& f,
               EnrichOptions options = {});

    // a == 1, v == 1 on interior nodes.
    void start_term();
    const SeparableTerm& working() const noexcept { return work_; }
    void set_working(SeparableTerm term);

    // Galerkin solve for v with the a-rows fixed; stores and returns the new v.
    const fem::Field& solve_spatial_mode();
    // Pointwise minimizer a_j(alpha_q) = Num(alpha_q) / Den(alpha_q); stores and returns the row.
    Eigen::VectorXd update_parametric_mode(std::size_t j);
    // Scale row j to unit max-abs (max entry +1), absorbing the factor into v.
    void normalize_row(std::size_t j);

    // 1/2 ||t||^2 - <f_n, t> for the working term t.
    double working_energy() const;
    // One v-solve followed by every a-update; true once both relative changes are within tolerance.
    bool sweep_once();

    // Runs the inner loop for a new term and appends it; returns its diagnostics.
    TermDiagnostics enrich_one();
    TermDiagnostics accept_working(int sweeps, bool converged);

    const ResidualLedger& ledger() const noexcept { return ledger_; }
    double residual_norm() const { return ledger_.dual_norm_estimate(); }
    SeparableSolution solution() const;

private:
    void refresh_densities();
    void refresh_factors(std::size_t j);

    const fem::GridMesh* mesh_;
    std::shared_ptr<const ParametricKernel> kernel_;
    EnrichOptions options_;
    ResidualLedger ledger_;
    SeparableTerm work_;
    std::vector<TermDiagnostics> diagnostics_;
    double initial_residual_ = 0.0;

    // Index m < terms().size() pairs the working term with accepted term m;
    // the last slot pairs it with itself.
    std::vector<std::vector<fem::Field>> factors_; // [m][j]
    std::vector<fem::Field> densities_;            // [m], energy_density(v_work, v_m)
};

// Greedy enrichment up to options.max_terms terms.
SeparableSolution enrich(const fem::GridMesh& mesh, const kle::KLBasis& basis, const ThetaGrid& grid,
                         const fem::Field& f, const EnrichOptions& options);

// Theta must lie in the grid range; a-tables are interpolated linearly.
fem::Field evaluate_surrogate_field(const SeparableSolution& sol, const Eigen::VectorXd& theta);
Eigen::VectorXd evaluate_surrogate(const SeparableSolution& sol, const fem::GridMesh& mesh,
                                   const Eigen::VectorXd& theta, std::span<const fem::Point> points);
// prod_j a_{i,j}(theta_j) for every term.
Eigen::VectorXd term_coefficients(const SeparableSolution& sol, const Eigen::VectorXd& theta);

} // namespace sepuq::pgd

#endif
