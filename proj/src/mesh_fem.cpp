#include "sepuq/mesh_fem.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/IterativeLinearSolvers>

#include "sepuq/errors.hpp"

namespace sepuq::fem {

namespace {

constexpr std::array<double, 2> gauss_points = {0.5 - 0.5 / 1.7320508075688772, 0.5 + 0.5 / 1.7320508075688772};

// Reference square [0,1]^2, local order (0,0) (1,0) (1,1) (0,1).
Eigen::Vector4d shape(double s, double t)
{
    return {(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t};
}

Eigen::Vector4d shape_ds(double t) { return {-(1 - t), (1 - t), t, -t}; }
Eigen::Vector4d shape_dt(double s) { return {-(1 - s), -s, s, (1 - s)}; }

void check_size(const GridMesh& mesh, const Field& field, const char* name)
{
    if (static_cast<std::size_t>(field.size()) != mesh.num_nodes()) {
        std::ostringstream ss;
        ss << name << " has " << field.size() << " values, mesh has " << mesh.num_nodes() << " nodes";
        throw ValidationError(ss.str());
    }
}

Eigen::Vector4d gather(const Field& field, const GridMesh::ElementNodes& nodes)
{
    return {field[nodes[0]], field[nodes[1]], field[nodes[2]], field[nodes[3]]};
}

} // namespace

GridMesh::GridMesh(int nx, int ny) : nx_(nx), ny_(ny), hx_(0.0), hy_(0.0)
{
    if (nx < 2 || ny < 2) {
        std::ostringstream ss;
        ss << "mesh needs at least 2 cells per axis, got " << nx << "x" << ny;
        throw ValidationError(ss.str());
    }
    hx_ = 1.0 / nx;
    hy_ = 1.0 / ny;

    free_index_.assign(num_nodes(), npos);
    for (int iy = 0; iy <= ny; ++iy) {
        for (int ix = 0; ix <= nx; ++ix) {
            const auto n = node_index(ix, iy);
            if (ix == 0 || iy == 0 || ix == nx || iy == ny) {
                boundary_.push_back(n);
            } else {
                free_index_[n] = free_.size();
                free_.push_back(n);
            }
        }
    }

    const double area = hx_ * hy_;
    for (auto& k : weighted_stiffness_) k.setZero();
    element_mass_.setZero();
    for (double s : gauss_points) {
        for (double t : gauss_points) {
            const double w = 0.25 * area;
            const Eigen::Vector4d n = shape(s, t);
            const Eigen::Vector4d dx = shape_ds(t) / hx_;
            const Eigen::Vector4d dy = shape_dt(s) / hy_;
            const Eigen::Matrix4d grad = dx * dx.transpose() + dy * dy.transpose();
            for (int c = 0; c < 4; ++c) weighted_stiffness_[c] += w * n[c] * grad;
            element_mass_ += w * n * n.transpose();
        }
    }
}

std::size_t GridMesh::node_index(int ix, int iy) const noexcept
{
    return static_cast<std::size_t>(iy * (nx_ + 1) + ix);
}

Point GridMesh::node(std::size_t n) const noexcept
{
    const auto row = static_cast<int>(n) / (nx_ + 1);
    const auto col = static_cast<int>(n) % (nx_ + 1);
    return {static_cast<double>(col) / nx_, static_cast<double>(row) / ny_};
}

GridMesh::ElementNodes GridMesh::element_nodes(std::size_t e) const noexcept
{
    const int ex = static_cast<int>(e) % nx_;
    const int ey = static_cast<int>(e) / nx_;
    return {node_index(ex, ey), node_index(ex + 1, ey), node_index(ex + 1, ey + 1), node_index(ex, ey + 1)};
}

double GridMesh::element_area(std::size_t) const noexcept { return hx_ * hy_; }

Field GridMesh::lumped_weights() const
{
    Field w = Field::Zero(static_cast<Eigen::Index>(num_nodes()));
    for (std::size_t e = 0; e < num_elements(); ++e) {
        for (auto n : element_nodes(e)) w[n] += 0.25 * element_area(e);
    }
    return w;
}

GridMesh build_mesh(int nx, int ny) { return GridMesh(nx, ny); }

Field load_vector(const GridMesh& mesh, const Field& f)
{
    check_size(mesh, f, "source");
    Field b = Field::Zero(f.size());
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto nodes = mesh.element_nodes(e);
        const Eigen::Vector4d be = mesh.element_mass() * gather(f, nodes);
        for (int a = 0; a < 4; ++a) b[nodes[a]] += be[a];
    }
    return b;
}

DirichletSystem assemble_with_load(const GridMesh& mesh, const Field& kappa, const Field& nodal_load)
{
    check_size(mesh, kappa, "kappa");
    check_size(mesh, nodal_load, "load");

    const auto& free = mesh.free_nodes();
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(mesh.num_elements() * 16);

    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto nodes = mesh.element_nodes(e);
        const Eigen::Vector4d ke = gather(kappa, nodes);
        for (double s : gauss_points) {
            for (double t : gauss_points) {
                const double kq = shape(s, t).dot(ke);
                if (!(kq > 0.0) || !std::isfinite(kq)) {
                    std::ostringstream ss;
                    ss << "kappa must be positive at every quadrature point; element " << e << " has " << kq;
                    throw ValidationError(ss.str());
                }
            }
        }
        Eigen::Matrix4d local = Eigen::Matrix4d::Zero();
        for (int c = 0; c < 4; ++c) local += ke[c] * mesh.weighted_stiffness()[c];
        for (int a = 0; a < 4; ++a) {
            const auto fa = mesh.free_index(nodes[a]);
            if (fa == GridMesh::npos) continue;
            for (int b = 0; b < 4; ++b) {
                const auto fb = mesh.free_index(nodes[b]);
                if (fb == GridMesh::npos) continue;
                triplets.emplace_back(static_cast<int>(fa), static_cast<int>(fb), local(a, b));
            }
        }
    }

    DirichletSystem sys;
    const auto nfree = static_cast<Eigen::Index>(free.size());
    sys.matrix.resize(nfree, nfree);
    sys.matrix.setFromTriplets(triplets.begin(), triplets.end());
    sys.load.resize(nfree);
    for (Eigen::Index i = 0; i < nfree; ++i) sys.load[i] = nodal_load[free[i]];
    sys.free_nodes = free;
    sys.num_nodes = mesh.num_nodes();
    return sys;
}

DirichletSystem assemble(const GridMesh& mesh, const Field& kappa, const Field& f)
{
    return assemble_with_load(mesh, kappa, load_vector(mesh, f));
}

Field apply_stiffness(const GridMesh& mesh, const Field& kappa, const Field& u)
{
    check_size(mesh, kappa, "kappa");
    check_size(mesh, u, "field");
    Field out = Field::Zero(u.size());
    const auto& kw = mesh.weighted_stiffness();
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto nodes = mesh.element_nodes(e);
        const Eigen::Vector4d ke = gather(kappa, nodes);
        const Eigen::Vector4d ue = gather(u, nodes);
        const Eigen::Vector4d r = (ke[0] * kw[0] + ke[1] * kw[1] + ke[2] * kw[2] + ke[3] * kw[3]) * ue;
        for (int a = 0; a < 4; ++a) out[nodes[a]] += r[a];
    }
    return out;
}

Field energy_density(const GridMesh& mesh, const Field& v, const Field& w)
{
    check_size(mesh, v, "field");
    check_size(mesh, w, "field");
    Field g = Field::Zero(v.size());
    const auto& kw = mesh.weighted_stiffness();
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto nodes = mesh.element_nodes(e);
        const Eigen::Vector4d ve = gather(v, nodes);
        const Eigen::Vector4d we = gather(w, nodes);
        for (int c = 0; c < 4; ++c) g[nodes[c]] += ve.dot(kw[c] * we);
    }
    return g;
}

Field solve(const DirichletSystem& system, const SolveOptions& options)
{
    const auto nfree = system.matrix.rows();
    Field u = Field::Zero(static_cast<Eigen::Index>(system.num_nodes));
    if (nfree == 0) return u;

    Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                             Eigen::DiagonalPreconditioner<double>>
        cg;
    cg.setTolerance(options.relative_tolerance);
    cg.setMaxIterations(static_cast<Eigen::Index>(options.max_iterations_per_unknown) * nfree);
    cg.compute(system.matrix);
    const Eigen::VectorXd x = cg.solve(system.load);
    if (cg.info() != Eigen::Success) {
        std::ostringstream ss;
        ss << "CG did not converge after " << cg.iterations() << " iterations, relative residual " << cg.error();
        throw NumericalError(ss.str());
    }
    for (Eigen::Index i = 0; i < nfree; ++i) u[system.free_nodes[i]] = x[i];
    return u;
}

double energy_norm(const GridMesh& mesh, const Field& kappa, const Field& u)
{
    check_size(mesh, kappa, "kappa");
    const double e2 = kappa.dot(energy_density(mesh, u, u));
    return std::sqrt(std::max(e2, 0.0));
}

double l2_norm(const GridMesh& mesh, const Field& u)
{
    check_size(mesh, u, "field");
    double sum = 0.0;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const Eigen::Vector4d ue = gather(u, mesh.element_nodes(e));
        sum += ue.dot(mesh.element_mass() * ue);
    }
    return std::sqrt(std::max(sum, 0.0));
}

double relative_error(const Field& u, const Field& u_ref, const std::function<double(const Field&)>& norm)
{
    if (u.size() != u_ref.size()) throw ValidationError("relative_error: fields differ in size");
    const double denom = norm(u_ref);
    if (!(denom > 0.0)) throw ValidationError("relative_error: reference has zero norm");
    return norm(u - u_ref) / denom;
}

Eigen::VectorXd sample_at_points(const GridMesh& mesh, const Field& u, std::span<const Point> points)
{
    check_size(mesh, u, "field");
    Eigen::VectorXd out(static_cast<Eigen::Index>(points.size()));
    for (std::size_t k = 0; k < points.size(); ++k) {
        const auto p = points[k];
        if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
            std::ostringstream ss;
            ss << "point (" << p.x << ", " << p.y << ") lies outside the unit square";
            throw ValidationError(ss.str());
        }
        // Snap roundoff so that node coordinates hit their nodal value exactly.
        auto grid_coord = [](double c, int n) {
            const double g = c * n;
            const double r = std::round(g);
            return std::abs(g - r) <= 1e-12 * n ? r : g;
        };
        const double gx = grid_coord(p.x, mesh.nx());
        const double gy = grid_coord(p.y, mesh.ny());
        const int ex = std::min(static_cast<int>(gx), mesh.nx() - 1);
        const int ey = std::min(static_cast<int>(gy), mesh.ny() - 1);
        const double s = gx - ex;
        const double t = gy - ey;
        const auto nodes = mesh.element_nodes(static_cast<std::size_t>(ey * mesh.nx() + ex));
        out[static_cast<Eigen::Index>(k)] = shape(s, t).dot(gather(u, nodes));
    }
    return out;
}

} // namespace sepuq::fem
