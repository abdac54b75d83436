#include "insens/pde.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace insens {

Eigen::SparseMatrix<double> dirichlet_laplacian(const Grid& grid) {
    const int nx = grid.nx(), ny = grid.ny();
    const double cx = 1.0 / (grid.hx * grid.hx);
    const double cy = 1.0 / (grid.hy * grid.hy);
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(5 * nx * ny));
    for (int j = 1; j <= ny; ++j) {
        for (int i = 1; i <= nx; ++i) {
            const int k = grid.node(i, j);
            t.emplace_back(k, k, -2.0 * (cx + cy));
            if (i > 1) t.emplace_back(k, grid.node(i - 1, j), cx);
            if (i < nx) t.emplace_back(k, grid.node(i + 1, j), cx);
            if (j > 1) t.emplace_back(k, grid.node(i, j - 1), cy);
            if (j < ny) t.emplace_back(k, grid.node(i, j + 1), cy);
        }
    }
    Eigen::SparseMatrix<double> a(nx * ny, nx * ny);
    a.setFromTriplets(t.begin(), t.end());
    return a;
}

HeatPropagator::HeatPropagator(const Grid& grid, TimeAxis time)
    : grid_(std::make_shared<const Grid>(grid)), time_(time), laplacian_(dirichlet_laplacian(grid)) {
    if (time.steps < 1 || !(time.horizon > 0.0)) {
        throw Error(ErrorCode::InvalidSpec, "time axis needs T > 0 and at least one step");
    }
    Eigen::SparseMatrix<double> id(laplacian_.rows(), laplacian_.cols());
    id.setIdentity();
    const double half = 0.5 * time.dt();
    explicit_part_ = id + half * laplacian_;
    const Eigen::SparseMatrix<double> implicit = id - half * laplacian_;
    implicit_part_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>(implicit);
    if (implicit_part_->info() != Eigen::Success) {
        throw Error(ErrorCode::SolverFailure, "factorization of the Crank-Nicolson matrix failed");
    }
}

Eigen::VectorXd HeatPropagator::solve_step(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd out = implicit_part_->solve(rhs);
    if (implicit_part_->info() != Eigen::Success) {
        throw Error(ErrorCode::SolverFailure, "Crank-Nicolson step solve failed");
    }
    return out;
}

void HeatPropagator::check_source(const SpaceTimeField& f) const {
    if (!(f.time == time_)) {
        throw Error(ErrorCode::DimensionMismatch, "field time axis differs from the propagator's");
    }
    require_size(static_cast<std::size_t>(f.points()), static_cast<std::size_t>(grid_->num_nodes()), "field nodes");
}

SpaceTimeField HeatPropagator::forward(const SpaceTimeField& source) const {
    check_source(source);
    const double half = 0.5 * time_.dt();
    SpaceTimeField y(time_, grid_->num_nodes());
    for (int n = 0; n < time_.steps; ++n) {
        const Eigen::VectorXd rhs = explicit_part_ * y.values.col(n) + half * (source.values.col(n) + source.values.col(n + 1));
        y.values.col(n + 1) = solve_step(rhs);
    }
    return y;
}

SpaceTimeField HeatPropagator::backward(const SpaceTimeField& source) const {
    check_source(source);
    const double half = 0.5 * time_.dt();
    SpaceTimeField z(time_, grid_->num_nodes());
    for (int n = time_.steps - 1; n >= 0; --n) {
        const Eigen::VectorXd rhs = explicit_part_ * z.values.col(n + 1) + half * (source.values.col(n) + source.values.col(n + 1));
        z.values.col(n) = solve_step(rhs);
    }
    return z;
}

SpaceTimeField HeatPropagator::forward_transpose(const SpaceTimeField& cot) const {
    check_source(cot);
    const double half = 0.5 * time_.dt();
    SpaceTimeField s(time_, grid_->num_nodes());
    Eigen::VectorXd a = cot.values.col(time_.steps);
    for (int n = time_.steps - 1; n >= 0; --n) {
        const Eigen::VectorXd p = solve_step(a);
        s.values.col(n) += half * p;
        s.values.col(n + 1) += half * p;
        a = cot.values.col(n) + explicit_part_ * p;
    }
    return s;
}

SpaceTimeField HeatPropagator::backward_transpose(const SpaceTimeField& cot) const {
    check_source(cot);
    const double half = 0.5 * time_.dt();
    SpaceTimeField s(time_, grid_->num_nodes());
    Eigen::VectorXd b = cot.values.col(0);
    for (int n = 0; n < time_.steps; ++n) {
        const Eigen::VectorXd p = solve_step(b);
        s.values.col(n) += half * p;
        s.values.col(n + 1) += half * p;
        b = cot.values.col(n + 1) + explicit_part_ * p;
    }
    return s;
}

SpaceTimeField HeatPropagator::embed(const Control& h) const {
    if (!(h.time == time_)) {
        throw Error(ErrorCode::DimensionMismatch, "control time axis differs from the propagator's");
    }
    const auto& nodes = grid_->omega_nodes;
    require_size(static_cast<std::size_t>(h.points()), nodes.size(), "control nodes");
    SpaceTimeField f(time_, grid_->num_nodes());
    for (std::size_t q = 0; q < nodes.size(); ++q) {
        const int k = nodes[q];
        f.values.row(k) = grid_->omega_mask[k] * h.values.row(static_cast<Eigen::Index>(q));
    }
    return f;
}

Control HeatPropagator::restrict_to_omega(const SpaceTimeField& f) const {
    check_source(f);
    const auto& nodes = grid_->omega_nodes;
    Control h(time_, static_cast<Eigen::Index>(nodes.size()));
    for (std::size_t q = 0; q < nodes.size(); ++q) {
        const int k = nodes[q];
        h.values.row(static_cast<Eigen::Index>(q)) = grid_->omega_mask[k] * f.values.row(k);
    }
    return h;
}

SpaceTimeField solve_forward(const HeatPropagator& heat, const SpaceTimeField& xi, const Control& h) {
    return heat.forward(xi + heat.embed(h));
}

SpaceTimeField solve_backward(const HeatPropagator& heat, const SpaceTimeField& source) {
    return heat.backward(source);
}

CascadeSolution solve_cascade(const HeatPropagator& heat, const SpaceTimeField& xi, const Control& h) {
    CascadeSolution out;
    out.y = solve_forward(heat, xi, h);
    SpaceTimeField coupling = out.y;
    coupling.values = heat.grid().theta_mask.asDiagonal() * out.y.values;
    out.z = heat.backward(coupling);
    return out;
}

Eigen::SparseMatrix<double> neumann_matrix(const Grid& grid) {
    const auto& pts = grid.boundary.points;
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(2 * pts.size());
    for (std::size_t p = 0; p < pts.size(); ++p) {
        const double inv = 1.0 / (2.0 * pts[p].h_normal);
        t.emplace_back(static_cast<int>(p), pts[p].inner1, -4.0 * inv);
        t.emplace_back(static_cast<int>(p), pts[p].inner2, 1.0 * inv);
    }
    Eigen::SparseMatrix<double> m(static_cast<Eigen::Index>(pts.size()), grid.num_nodes());
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

BoundaryTrace neumann_trace(const SpaceTimeField& field, const Grid& grid) {
    require_size(static_cast<std::size_t>(field.points()), static_cast<std::size_t>(grid.num_nodes()), "field nodes");
    return BoundaryTrace(field.time, Eigen::MatrixXd(neumann_matrix(grid) * field.values));
}

Control zero_control(const Grid& grid, const TimeAxis& time) {
    return Control(time, static_cast<Eigen::Index>(grid.omega_nodes.size()));
}

SpaceTimeField zero_field(const Grid& grid, const TimeAxis& time) { return SpaceTimeField(time, grid.num_nodes()); }

namespace {

// Σₙ wₙ Σₚ sₚ aₚₙ bₚₙ in fixed (level-outer, point-inner) order.
double weighted_pairing(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const TimeAxis& time,
                        const Eigen::VectorXd& spatial) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "inner product of differently shaped fields");
    }
    double total = 0.0;
    for (Eigen::Index n = 0; n < a.cols(); ++n) {
        double level = 0.0;
        for (Eigen::Index p = 0; p < a.rows(); ++p) {
            level += spatial[p] * a(p, n) * b(p, n);
        }
        total += time.weight(static_cast<int>(n)) * level;
    }
    return total;
}

} // namespace

double inner(const BoundaryTrace& a, const BoundaryTrace& b, const Grid& grid) {
    a.check_compatible(b);
    return weighted_pairing(a.values, b.values, a.time, grid.boundary.weights());
}

double inner(const Control& a, const Control& b, const Grid& grid) {
    a.check_compatible(b);
    return weighted_pairing(a.values, b.values, a.time, Eigen::VectorXd::Constant(a.points(), grid.cell_area()));
}

double inner(const SpaceTimeField& a, const SpaceTimeField& b, const Grid& grid) {
    a.check_compatible(b);
    return weighted_pairing(a.values, b.values, a.time, Eigen::VectorXd::Constant(a.points(), grid.cell_area()));
}

double inner(const TerminalState& a, const TerminalState& b, const Grid& grid) {
    require_size(static_cast<std::size_t>(a.values.size()), static_cast<std::size_t>(b.values.size()), "terminal state");
    return grid.cell_area() * a.values.dot(b.values);
}

double inner(const TracePair& a, const TracePair& b, const Grid& grid) {
    return inner(a.y, b.y, grid) + inner(a.z, b.z, grid);
}

double inner(const AugmentedTrace& a, const AugmentedTrace& b, const Grid& grid) {
    return inner(a.y, b.y, grid) + inner(a.z, b.z, grid) + inner(a.terminal, b.terminal, grid);
}

double norm(const BoundaryTrace& a, const Grid& grid) { return std::sqrt(std::max(0.0, inner(a, a, grid))); }
double norm(const Control& a, const Grid& grid) { return std::sqrt(std::max(0.0, inner(a, a, grid))); }
double norm(const SpaceTimeField& a, const Grid& grid) { return std::sqrt(std::max(0.0, inner(a, a, grid))); }
double norm(const TerminalState& a, const Grid& grid) { return std::sqrt(std::max(0.0, inner(a, a, grid))); }

double level_norm(const SpaceTimeField& a, int level, const Grid& grid) {
    return std::sqrt(grid.cell_area() * a.values.col(level).squaredNorm());
}

TraceOperator::TraceOperator(std::shared_ptr<const HeatPropagator> heat)
    : heat_(std::move(heat)), neumann_(neumann_matrix(heat_->grid())) {}

TracePair TraceOperator::apply(const Control& h) const {
    const CascadeSolution c = solve_cascade(*heat_, zero_field(grid(), time()), h);
    return {BoundaryTrace(time(), Eigen::MatrixXd(neumann_ * c.y.values)),
            BoundaryTrace(time(), Eigen::MatrixXd(neumann_ * c.z.values))};
}

AugmentedTrace TraceOperator::apply_augmented(const Control& h) const {
    return observe(zero_field(grid(), time()), h);
}

AugmentedTrace TraceOperator::observe(const SpaceTimeField& xi, const Control& h) const {
    const CascadeSolution c = solve_cascade(*heat_, xi, h);
    return {BoundaryTrace(time(), Eigen::MatrixXd(neumann_ * c.y.values)),
            BoundaryTrace(time(), Eigen::MatrixXd(neumann_ * c.z.values)),
            TerminalState{c.y.values.col(time().steps)}};
}

Control TraceOperator::transpose_impl(const BoundaryTrace& gy, const BoundaryTrace& gz,
                                      const Eigen::VectorXd* terminal) const {
    const Grid& g = grid();
    const TimeAxis& t = time();
    require_size(static_cast<std::size_t>(gy.points()), g.boundary.size(), "y trace");
    require_size(static_cast<std::size_t>(gz.points()), g.boundary.size(), "z trace");
    if (!(gy.time == t) || !(gz.time == t)) {
        throw Error(ErrorCode::DimensionMismatch, "trace time axis differs from the operator's");
    }
    // Weighted pairings become Euclidean ones after scaling by the quadrature weights.
    const Eigen::VectorXd tw = t.weights();
    const Eigen::VectorXd bw = g.boundary.weights();
    const Eigen::MatrixXd wy = bw.asDiagonal() * gy.values * tw.asDiagonal();
    const Eigen::MatrixXd wz = bw.asDiagonal() * gz.values * tw.asDiagonal();

    SpaceTimeField z_cot(t, Eigen::MatrixXd(neumann_.transpose() * wz));
    SpaceTimeField y_cot(t, Eigen::MatrixXd(neumann_.transpose() * wy));
    if (terminal != nullptr) {
        require_size(static_cast<std::size_t>(terminal->size()), static_cast<std::size_t>(g.num_nodes()), "terminal state");
        y_cot.values.col(t.steps) += g.cell_area() * (*terminal);
    }
    const SpaceTimeField coupling_cot = heat_->backward_transpose(z_cot);
    y_cot.values += g.theta_mask.asDiagonal() * coupling_cot.values;
    const SpaceTimeField source_cot = heat_->forward_transpose(y_cot);

    Control h = heat_->restrict_to_omega(source_cot);
    const double area = g.cell_area();
    for (int n = 0; n < t.levels(); ++n) {
        h.values.col(n) /= (t.weight(n) * area);
    }
    return h;
}

Control TraceOperator::apply_transpose(const TracePair& g) const { return transpose_impl(g.y, g.z, nullptr); }

Control TraceOperator::apply_augmented_transpose(const AugmentedTrace& g) const {
    return transpose_impl(g.y, g.z, &g.terminal.values);
}

Eigen::VectorXd TimeAxis::weights() const {
    Eigen::VectorXd w(levels());
    for (int n = 0; n < levels(); ++n) {
        w[n] = weight(n);
    }
    return w;
}

} // namespace insens
