#include "sepuq/pgd_forward.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>

#include "sepuq/errors.hpp"

namespace sepuq::pgd {

namespace {

void check_rows(const Eigen::MatrixXd& rows, std::size_t n_params, const ThetaGrid& grid, const char* name)
{
    if (static_cast<std::size_t>(rows.rows()) != n_params || static_cast<std::size_t>(rows.cols()) != grid.size()) {
        std::ostringstream ss;
        ss << name << " must be " << n_params << " x " << grid.size() << ", got " << rows.rows() << " x "
           << rows.cols();
        throw ValidationError(ss.str());
    }
}

double relative_change(double diff_norm, double ref_norm)
{
    if (ref_norm > 0.0) return diff_norm / ref_norm;
    return diff_norm > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

} // namespace

std::vector<Eigen::MatrixXd> SeparableSolution::parametric_tables() const
{
    std::vector<Eigen::MatrixXd> out;
    out.reserve(terms.size());
    for (const auto& t : terms) out.push_back(t.a);
    return out;
}

fem::Field kappa_moment_field(const kle::KLBasis& basis, const ThetaGrid& grid, const Eigen::MatrixXd& rows_a,
                              const Eigen::MatrixXd& rows_b, std::optional<std::size_t> skip_j,
                              std::optional<double> theta_j)
{
    const auto n2 = basis.size();
    check_rows(rows_a, n2, grid, "rowA");
    check_rows(rows_b, n2, grid, "rowB");
    if (skip_j.has_value() != theta_j.has_value()) {
        throw ValidationError("kappa_moment_field: skip_j and theta_j must be given together");
    }
    if (skip_j && *skip_j >= n2) throw ValidationError("kappa_moment_field: skip_j out of range");

    fem::Field out = fem::Field::Ones(basis.modes.rows());
    for (std::size_t j = 0; j < n2; ++j) {
        const auto col = basis.modes.col(static_cast<Eigen::Index>(j));
        if (skip_j && *skip_j == j) {
            out.array() *= (*theta_j * col.array()).exp();
            continue;
        }
        fem::Field f = fem::Field::Zero(col.size());
        for (std::size_t q = 0; q < grid.size(); ++q) {
            const auto qi = static_cast<Eigen::Index>(q);
            const double c = grid.weights[qi] * rows_a(static_cast<Eigen::Index>(j), qi) *
                             rows_b(static_cast<Eigen::Index>(j), qi);
            f.array() += c * (grid.points[qi] * col.array()).exp();
        }
        out.array() *= f.array();
    }
    if (!out.allFinite()) throw NumericalError("kappa_moment_field: overflow in exp(theta * phi)");
    return out;
}

ParametricKernel::ParametricKernel(const kle::KLBasis& basis, const ThetaGrid& grid)
    : grid_(grid), num_nodes_(basis.num_nodes())
{
    const auto ng = static_cast<Eigen::Index>(grid.size());
    exp_.reserve(basis.size());
    for (std::size_t j = 0; j < basis.size(); ++j) {
        const auto col = basis.modes.col(static_cast<Eigen::Index>(j));
        Eigen::MatrixXd table(col.size(), ng);
        for (Eigen::Index q = 0; q < ng; ++q) table.col(q) = (grid.points[q] * col.array()).exp().matrix();
        if (!table.allFinite()) throw NumericalError("parametric kernel: overflow in exp(theta * phi)");
        exp_.push_back(std::move(table));
    }
}

fem::Field ParametricKernel::factor(std::size_t j, const Eigen::Ref<const Eigen::VectorXd>& a,
                                    const Eigen::Ref<const Eigen::VectorXd>& b) const
{
    const Eigen::VectorXd c = grid_.weights.cwiseProduct(a).cwiseProduct(b);
    return exp_.at(j) * c;
}

fem::Field ParametricKernel::moment(const Eigen::MatrixXd& rows_a, const Eigen::MatrixXd& rows_b) const
{
    fem::Field out = fem::Field::Ones(static_cast<Eigen::Index>(num_nodes_));
    for (std::size_t j = 0; j < exp_.size(); ++j) {
        const auto r = static_cast<Eigen::Index>(j);
        out.array() *= factor(j, rows_a.row(r).transpose(), rows_b.row(r).transpose()).array();
    }
    return out;
}

double ParametricKernel::mean_product(const Eigen::MatrixXd& rows) const
{
    double p = 1.0;
    for (Eigen::Index j = 0; j < rows.rows(); ++j) p *= rows.row(j).dot(grid_.weights.transpose());
    return p;
}

ResidualLedger::ResidualLedger(const fem::GridMesh& mesh, std::shared_ptr<const ParametricKernel> kernel,
                               fem::Field load)
    : mesh_(&mesh), kernel_(std::move(kernel)), load_(std::move(load))
{
    if (kernel_->num_nodes() != mesh.num_nodes() || static_cast<std::size_t>(load_.size()) != mesh.num_nodes()) {
        throw ValidationError("residual ledger: mesh, basis and load sizes disagree");
    }
    fem::Field h1 = fem::Field::Zero(load_.size());
    Eigen::Matrix4d laplace = Eigen::Matrix4d::Zero();
    for (const auto& k : mesh.weighted_stiffness()) laplace += k;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto nodes = mesh.element_nodes(e);
        for (int a = 0; a < 4; ++a) h1[nodes[a]] += laplace(a, a) + mesh.element_mass()(a, a);
    }
    hat_h1_norm_ = h1.cwiseSqrt();
}

void ResidualLedger::push(SeparableTerm term) { terms_.push_back(std::move(term)); }

double ResidualLedger::inner(const SeparableTerm& s, const SeparableTerm& t) const
{
    return kernel_->moment(s.a, t.a).dot(fem::energy_density(*mesh_, s.v, t.v));
}

double ResidualLedger::apply(const SeparableTerm& test) const
{
    double value = kernel_->mean_product(test.a) * load_.dot(test.v);
    for (const auto& term : terms_) value -= inner(test, term);
    return value;
}

double ResidualLedger::dual_norm_estimate() const
{
    const auto& grid = kernel_->grid();
    const double volume = std::pow(grid.weights.sum(), static_cast<double>(kernel_->num_params()));
    fem::Field avg = load_;
    for (const auto& term : terms_) {
        const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(term.a.rows(), term.a.cols());
        avg -= fem::apply_stiffness(*mesh_, kernel_->moment(term.a, ones), term.v) / volume;
    }
    double sup = 0.0;
    for (auto n : mesh_->free_nodes()) sup = std::max(sup, std::abs(avg[n]) / hat_h1_norm_[n]);
    return sup;
}

double residual_ledger_apply(const ResidualLedger& ledger, const SeparableTerm& test_direction)
{
    return ledger.apply(test_direction);
}

PgdBuilder::PgdBuilder(const fem::GridMesh& mesh, const kle::KLBasis& basis, ThetaGrid grid, const fem::Field& f,
                       EnrichOptions options)
    : mesh_(&mesh),
      kernel_(std::make_shared<const ParametricKernel>(basis, grid)),
      options_(options),
      ledger_(mesh, kernel_, fem::load_vector(mesh, f))
{
    if (basis.num_nodes() != mesh.num_nodes()) throw ValidationError("PGD: basis was built on a different mesh");
    if (!(options.tol_a > 0.0 && options.tol_v > 0.0 && options.tol_f > 0.0)) {
        throw ValidationError("PGD: tolerances must be positive");
    }
    if (options.max_sweeps < 1) throw ValidationError("PGD: max_sweeps must be at least 1");
    initial_residual_ = ledger_.dual_norm_estimate();
}

void PgdBuilder::start_term()
{
    const auto n2 = static_cast<Eigen::Index>(kernel_->num_params());
    const auto ng = static_cast<Eigen::Index>(kernel_->grid().size());
    SeparableTerm t;
    t.a = Eigen::MatrixXd::Ones(n2, ng);
    t.v = fem::Field::Zero(static_cast<Eigen::Index>(mesh_->num_nodes()));
    for (auto n : mesh_->free_nodes()) t.v[n] = 1.0;
    set_working(std::move(t));
}

void PgdBuilder::set_working(SeparableTerm term)
{
    check_rows(term.a, kernel_->num_params(), kernel_->grid(), "working a");
    if (static_cast<std::size_t>(term.v.size()) != mesh_->num_nodes()) {
        throw ValidationError("PGD: working v has the wrong size");
    }
    work_ = std::move(term);
    factors_.assign(ledger_.terms().size() + 1, std::vector<fem::Field>(kernel_->num_params()));
    for (std::size_t j = 0; j < kernel_->num_params(); ++j) refresh_factors(j);
    refresh_densities();
}

void PgdBuilder::refresh_factors(std::size_t j)
{
    const auto r = static_cast<Eigen::Index>(j);
    const auto& terms = ledger_.terms();
    const Eigen::VectorXd aw = work_.a.row(r).transpose();
    for (std::size_t m = 0; m < terms.size(); ++m) {
        factors_[m][j] = kernel_->factor(j, aw, terms[m].a.row(r).transpose());
    }
    factors_.back()[j] = kernel_->factor(j, aw, aw);
}

void PgdBuilder::refresh_densities()
{
    const auto& terms = ledger_.terms();
    densities_.resize(terms.size() + 1);
    for (std::size_t m = 0; m < terms.size(); ++m) densities_[m] = fem::energy_density(*mesh_, work_.v, terms[m].v);
    densities_.back() = fem::energy_density(*mesh_, work_.v, work_.v);
}

const fem::Field& PgdBuilder::solve_spatial_mode()
{
    const auto& terms = ledger_.terms();
    const auto nodes = static_cast<Eigen::Index>(mesh_->num_nodes());
    auto product = [&](std::size_t m) {
        fem::Field p = fem::Field::Ones(nodes);
        for (const auto& f : factors_[m]) p.array() *= f.array();
        return p;
    };

    fem::Field rhs = kernel_->mean_product(work_.a) * ledger_.load();
    for (std::size_t m = 0; m < terms.size(); ++m) rhs -= fem::apply_stiffness(*mesh_, product(m), terms[m].v);

    const auto system = fem::assemble_with_load(*mesh_, product(terms.size()), rhs);
    work_.v = fem::solve(system, options_.solver);
    refresh_densities();
    return work_.v;
}

Eigen::VectorXd PgdBuilder::update_parametric_mode(std::size_t j)
{
    const auto n2 = kernel_->num_params();
    if (j >= n2) throw ValidationError("update_parametric_mode: parameter index out of range");
    const auto& terms = ledger_.terms();
    const auto& grid = kernel_->grid();
    const auto r = static_cast<Eigen::Index>(j);

    double others_mean = 1.0;
    for (std::size_t k = 0; k < n2; ++k) {
        if (k != j) others_mean *= work_.a.row(static_cast<Eigen::Index>(k)).dot(grid.weights.transpose());
    }
    const double load_dot_v = ledger_.load().dot(work_.v);

    auto contraction = [&](std::size_t m) -> Eigen::VectorXd {
        fem::Field h = densities_[m];
        for (std::size_t k = 0; k < n2; ++k) {
            if (k != j) h.array() *= factors_[m][k].array();
        }
        return kernel_->exp_table(j).transpose() * h;
    };

    const Eigen::VectorXd den = contraction(terms.size());
    Eigen::VectorXd num = Eigen::VectorXd::Constant(den.size(), others_mean * load_dot_v);
    for (std::size_t m = 0; m < terms.size(); ++m) {
        num -= terms[m].a.row(r).transpose().cwiseProduct(contraction(m));
    }
    for (Eigen::Index q = 0; q < den.size(); ++q) {
        if (!(den[q] > 0.0)) {
            std::ostringstream ss;
            ss << "update_parametric_mode: non-positive denominator " << den[q] << " at grid point " << q
               << " for parameter " << j << " (spatial mode has no energy)";
            throw NumericalError(ss.str());
        }
    }
    const Eigen::VectorXd row = num.cwiseQuotient(den);
    work_.a.row(r) = row.transpose();
    refresh_factors(j);
    return row;
}

void PgdBuilder::normalize_row(std::size_t j)
{
    const auto r = static_cast<Eigen::Index>(j);
    Eigen::Index imax = 0;
    work_.a.row(r).cwiseAbs().maxCoeff(&imax);
    const double s = work_.a(r, imax);
    if (s == 0.0 || !std::isfinite(s)) throw NumericalError("normalize_row: parametric mode vanished");
    work_.a.row(r) /= s;
    work_.v *= s;
    for (std::size_t m = 0; m + 1 < densities_.size(); ++m) densities_[m] *= s;
    densities_.back() *= s * s;
    refresh_factors(j);
}

double PgdBuilder::working_energy() const
{
    return 0.5 * ledger_.inner(work_, work_) - ledger_.apply(work_);
}

bool PgdBuilder::sweep_once()
{
    const fem::Field v_old = work_.v;
    const Eigen::MatrixXd a_old = work_.a;
    solve_spatial_mode();
    for (std::size_t j = 0; j < kernel_->num_params(); ++j) {
        update_parametric_mode(j);
        normalize_row(j);
    }
    const double dv = relative_change((work_.v - v_old).norm(), work_.v.norm());
    const double da = relative_change((work_.a - a_old).norm(), work_.a.norm());
    return dv <= options_.tol_v && da <= options_.tol_a;
}

TermDiagnostics PgdBuilder::enrich_one()
{
    start_term();
    const auto n2 = kernel_->num_params();
    bool converged = false;
    int sweep = 0;

    // Screen the constant start against starts that are odd in one theta_j.
    if (options_.screen_sweeps > 0 && n2 > 0) {
        const SeparableTerm base = work_;
        const auto& alpha = kernel_->grid().points;
        const double scale = std::max(std::abs(alpha[0]), std::abs(alpha[alpha.size() - 1]));
        SeparableTerm best;
        double best_energy = std::numeric_limits<double>::infinity();
        bool best_converged = false;
        for (std::size_t k = 0; k <= n2; ++k) {
            SeparableTerm t = base;
            if (k > 0) {
                for (Eigen::Index q = 0; q < t.a.cols(); ++q) t.a(static_cast<Eigen::Index>(k - 1), q) = alpha[q] / scale;
            }
            set_working(std::move(t));
            bool done = false;
            for (int s = 0; s < options_.screen_sweeps && !done; ++s) done = sweep_once();
            const double e = working_energy();
            if (e < best_energy) {
                best_energy = e;
                best = work_;
                best_converged = done;
            }
        }
        set_working(std::move(best));
        sweep = options_.screen_sweeps;
        converged = best_converged;
    }

    while (!converged && sweep < options_.max_sweeps) {
        ++sweep;
        converged = sweep_once();
    }
    return accept_working(sweep, converged);
}

TermDiagnostics PgdBuilder::accept_working(int sweeps, bool converged)
{
    TermDiagnostics d;
    d.term_norm_sq = ledger_.inner(work_, work_);
    const double ft = ledger_.apply(work_);
    d.energy = 0.5 * d.term_norm_sq - ft;
    d.residual_drop = 2.0 * ft - d.term_norm_sq;
    d.sweeps = sweeps;
    d.converged = converged;
    ledger_.push(work_);
    d.residual_norm = ledger_.dual_norm_estimate();
    diagnostics_.push_back(d);
    return d;
}

SeparableSolution PgdBuilder::solution() const
{
    SeparableSolution sol;
    sol.grid = kernel_->grid();
    sol.num_params = kernel_->num_params();
    sol.num_nodes = mesh_->num_nodes();
    sol.terms = ledger_.terms();
    sol.diagnostics = diagnostics_;
    sol.initial_residual_norm = initial_residual_;
    return sol;
}

SeparableSolution enrich(const fem::GridMesh& mesh, const kle::KLBasis& basis, const ThetaGrid& grid,
                         const fem::Field& f, const EnrichOptions& options)
{
    PgdBuilder builder(mesh, basis, grid, f, options);
    const double stop = options.tol_f * builder.solution().initial_residual_norm;
    for (std::size_t i = 0; i < options.max_terms; ++i) {
        if (builder.residual_norm() <= stop) break;
        const auto d = builder.enrich_one();
        if (!d.converged) {
            std::clog << "warning: PGD term " << i + 1 << " accepted after " << d.sweeps
                      << " sweeps without meeting tol_a/tol_v\n";
        }
    }
    return builder.solution();
}

Eigen::VectorXd term_coefficients(const SeparableSolution& sol, const Eigen::VectorXd& theta)
{
    if (static_cast<std::size_t>(theta.size()) != sol.num_params) {
        std::ostringstream ss;
        ss << "theta has " << theta.size() << " entries, surrogate has " << sol.num_params << " parameters";
        throw ValidationError(ss.str());
    }
    Eigen::VectorXd c(static_cast<Eigen::Index>(sol.terms.size()));
    for (std::size_t i = 0; i < sol.terms.size(); ++i) {
        double p = 1.0;
        for (Eigen::Index j = 0; j < theta.size(); ++j) {
            p *= sol.grid.interpolate(sol.terms[i].a.row(j).transpose(), theta[j]);
        }
        c[static_cast<Eigen::Index>(i)] = p;
    }
    return c;
}

fem::Field evaluate_surrogate_field(const SeparableSolution& sol, const Eigen::VectorXd& theta)
{
    const Eigen::VectorXd c = term_coefficients(sol, theta);
    fem::Field u = fem::Field::Zero(static_cast<Eigen::Index>(sol.num_nodes));
    for (std::size_t i = 0; i < sol.terms.size(); ++i) u += c[static_cast<Eigen::Index>(i)] * sol.terms[i].v;
    return u;
}

Eigen::VectorXd evaluate_surrogate(const SeparableSolution& sol, const fem::GridMesh& mesh,
                                   const Eigen::VectorXd& theta, std::span<const fem::Point> points)
{
    return fem::sample_at_points(mesh, evaluate_surrogate_field(sol, theta), points);
}

} // namespace sepuq::pgd
