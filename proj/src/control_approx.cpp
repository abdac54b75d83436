#include "insens/control_approx.hpp"

#include <chrono>
#include <cstdio>
#include <cmath>
#include <functional>

#include <Eigen/Dense>

namespace insens {

std::string_view to_string(TerminalMode mode) noexcept {
    switch (mode) {
    case TerminalMode::None: return "none";
    case TerminalMode::Approximate: return "approximate";
    case TerminalMode::Null: return "null";
    }
    return "?";
}

TraceTarget TraceTarget::zero(const Grid& grid, const TimeAxis& time) {
    const auto np = static_cast<Eigen::Index>(grid.boundary.size());
    return {BoundaryTrace(time, np), BoundaryTrace(time, np), std::nullopt, TerminalMode::None};
}

void TraceTarget::validate(const Grid& grid, const TimeAxis& time) const {
    const auto np = static_cast<std::size_t>(grid.boundary.size());
    require_size(static_cast<std::size_t>(f1.points()), np, "f1 boundary points");
    require_size(static_cast<std::size_t>(f2.points()), np, "f2 boundary points");
    if (!(f1.time == time) || !(f2.time == time)) {
        throw Error(ErrorCode::DimensionMismatch, "trace targets use a different time axis");
    }
    if ((terminal_mode == TerminalMode::Approximate) != y_T.has_value()) {
        throw Error(ErrorCode::InvalidSpec, "terminal target must be present exactly in approximate terminal mode");
    }
    if (y_T) {
        require_size(static_cast<std::size_t>(y_T->values.size()), static_cast<std::size_t>(grid.num_nodes()),
                     "terminal target");
    }
    if (!(w_trace > 0.0) || !(w_terminal > 0.0)) {
        throw Error(ErrorCode::InvalidSpec, "channel weights must be positive");
    }
}

RegularizationSchedule RegularizationSchedule::geometric(double start, double end, double factor) {
    if (!(start > 0.0) || !(end > 0.0) || !(factor > 1.0) || end > start) {
        throw Error(ErrorCode::InvalidSpec, "bad geometric schedule");
    }
    RegularizationSchedule s;
    for (double a = start; a >= end * (1.0 - 1e-9); a /= factor) {
        s.alphas.push_back(a);
    }
    return s;
}

void RegularizationSchedule::validate() const {
    if (alphas.empty()) {
        throw Error(ErrorCode::InvalidSpec, "empty regularization schedule");
    }
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        if (!(alphas[i] > 0.0) || (i > 0 && !(alphas[i] < alphas[i - 1]))) {
            throw Error(ErrorCode::InvalidSpec, "alphas must be positive and strictly decreasing");
        }
    }
    if (!(cg_tol > 0.0) || cg_maxit <= 0 || !(epsilon > 0.0)) {
        throw Error(ErrorCode::InvalidSpec, "tolerances must be positive");
    }
}

namespace {

AugmentedTrace weighted(AugmentedTrace a, const ChannelWeights& w) {
    a.y *= w.y;
    a.z *= w.z;
    a.terminal.values *= w.terminal;
    return a;
}

Control normal_operator(const TraceOperator& op, const Control& h, const ChannelWeights& w, double alpha) {
    Control out = op.apply_augmented_transpose(weighted(op.apply_augmented(h), w));
    out.values += alpha * h.values;
    return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Assessment {
    ScheduleStep step;
    bool success = false;
};

using Assessor = std::function<Assessment(const Control&)>;

struct SweepOutcome {
    Control h;
    double alpha = 0.0;
    int cg_iterations = 0;
    bool success = false;
    bool exhausted = false;
    bool failure = false;
    std::vector<ScheduleStep> history;
    std::string note;
};

/// Runs the α sweep on residual `r`, warm-starting each stage.
SweepOutcome sweep(const TraceOperator& op, const AugmentedTrace& r, const ChannelWeights& w,
                   const RegularizationSchedule& schedule, const Assessor& assess) {
    schedule.validate();
    SweepOutcome out;
    Control h = zero_control(op.grid(), op.time());
    bool have_converged = false;
    for (const double alpha : schedule.alphas) {
        const CGReport cg = tikhonov_solve(op, r, w, alpha, h, schedule.cg_tol, schedule.cg_maxit);
        out.cg_iterations += cg.iterations;
        if (!cg.converged) {
            out.failure = true;
            char buf[128];
            std::snprintf(buf, sizeof buf, "conjugate gradients stalled at alpha=%.3g (relative residual %.3g)",
                          alpha, cg.relative_residual);
            out.note = buf;
            break;
        }
        Assessment a = assess(h);
        a.step.alpha = alpha;
        a.step.cg_iterations = cg.iterations;
        a.step.cg_converged = true;
        out.history.push_back(a.step);
        out.h = h;
        out.alpha = alpha;
        have_converged = true;
        if (a.success) {
            out.success = true;
            return out;
        }
    }
    if (!have_converged) {
        throw Error(ErrorCode::SolverFailure, out.note);
    }
    out.exhausted = true;
    if (out.note.empty()) {
        out.note = "schedule exhausted before the stopping criterion was met";
    }
    return out;
}

double terminal_distance(const AugmentedTrace& tr, const std::optional<TerminalState>& y_T, const Grid& grid) {
    TerminalState d = tr.terminal;
    if (y_T) {
        d.values -= y_T->values;
    }
    return norm(d, grid);
}

/// Fills the recomputed diagnostics of `res` from an independent cascade solve.
void finalize(ControlResult& res, const TraceOperator& op, const SpaceTimeField& xi, const TraceTarget& target) {
    const Grid& g = op.grid();
    const AugmentedTrace tr = op.observe(xi, res.h);
    res.residual_y = norm(tr.y - target.f1, g);
    res.residual_z = norm(tr.z - target.f2, g);
    res.residual_terminal =
        target.terminal_mode == TerminalMode::None ? 0.0 : terminal_distance(tr, target.y_T, g);
    res.trace_norm_y = norm(tr.y, g);
    res.trace_norm_z = norm(tr.z, g);
    res.terminal_norm = norm(tr.terminal, g);
    res.kernel_l1_after = kernel_l1_norm(sensitivity_kernel(tr.y, tr.z), g.boundary);
    res.cauchy_schwarz_bound = res.trace_norm_y * res.trace_norm_z;
}

void absorb(ControlResult& res, SweepOutcome&& s) {
    res.h = std::move(s.h);
    res.alpha = s.alpha;
    res.cg_iterations += s.cg_iterations;
    res.criteria_met = s.success;
    res.schedule_exhausted = s.exhausted;
    res.solver_failure = s.failure;
    res.history.insert(res.history.end(), s.history.begin(), s.history.end());
    res.note = std::move(s.note);
}

ScheduleStep step_from(const AugmentedTrace& tr, const TraceTarget& t, const Grid& g) {
    ScheduleStep s;
    const double ry = norm(tr.y - t.f1, g);
    const double rz = norm(tr.z - t.f2, g);
    s.trace_residual = std::hypot(ry, rz);
    s.terminal_residual = t.terminal_mode == TerminalMode::None ? 0.0 : terminal_distance(tr, t.y_T, g);
    s.misfit = t.w_trace * (ry * ry + rz * rz) +
               (t.terminal_mode == TerminalMode::None ? 0.0 : t.w_terminal * s.terminal_residual * s.terminal_residual);
    s.kernel_l1 = kernel_l1_norm(sensitivity_kernel(tr.y, tr.z), g.boundary);
    return s;
}

/// Residual r = target − observation of the uncontrolled cascade.
AugmentedTrace shifted_target(const AugmentedTrace& base, const TraceTarget& t) {
    AugmentedTrace r{t.f1 - base.y, t.f2 - base.z, TerminalState{-base.terminal.values}};
    if (t.y_T) {
        r.terminal.values += t.y_T->values;
    }
    if (t.terminal_mode == TerminalMode::None) {
        r.terminal.values.setZero();
    }
    return r;
}

ChannelWeights weights_of(const TraceTarget& t) {
    return {t.w_trace, t.w_trace, t.terminal_mode == TerminalMode::None ? 0.0 : t.w_terminal};
}

bool traces_small(const ScheduleStep& s, const TerminalGoal& goal) {
    return goal.trace_epsilon > 0.0 ? s.trace_residual <= goal.trace_epsilon : s.kernel_l1 <= goal.kernel_epsilon;
}

ControlResult run_trace_problem(const TraceOperator& op, const SpaceTimeField& xi, const TraceTarget& target,
                                const RegularizationSchedule& schedule, const std::function<bool(const ScheduleStep&)>& ok) {
    const auto t0 = std::chrono::steady_clock::now();
    const Grid& g = op.grid();
    target.validate(g, op.time());
    const AugmentedTrace base = op.observe(xi, zero_control(g, op.time()));
    ControlResult res;
    res.kernel_l1_before = kernel_l1_norm(sensitivity_kernel(base.y, base.z), g.boundary);
    const Assessor assess = [&](const Control& h) {
        Assessment a;
        a.step = step_from(op.observe(xi, h), target, g);
        a.success = ok(a.step);
        return a;
    };
    absorb(res, sweep(op, shifted_target(base, target), weights_of(target), schedule, assess));
    finalize(res, op, xi, target);
    res.wall_seconds = seconds_since(t0);
    return res;
}

} // namespace

CGReport tikhonov_solve(const TraceOperator& op, const AugmentedTrace& r, const ChannelWeights& w, double alpha,
                        Control& h, double tol, int maxit) {
    const Grid& g = op.grid();
    CGReport rep;
    const Control b = op.apply_augmented_transpose(weighted(r, w));
    const double bnorm = norm(b, g);
    if (bnorm == 0.0) {
        h.values.setZero();
        rep.converged = true;
        return rep;
    }
    Control res = b - normal_operator(op, h, w, alpha);
    Control p = res;
    double rr = inner(res, res, g);
    rep.relative_residual = std::sqrt(rr) / bnorm;
    while (rep.relative_residual > tol) {
        if (rep.iterations >= maxit) {
            return rep;
        }
        const Control np = normal_operator(op, p, w, alpha);
        const double pap = inner(p, np, g);
        if (!(pap > 0.0)) {
            return rep;
        }
        const double step = rr / pap;
        h.values += step * p.values;
        res.values -= step * np.values;
        const double rr_new = inner(res, res, g);
        p.values = res.values + (rr_new / rr) * p.values;
        rr = rr_new;
        ++rep.iterations;
        rep.relative_residual = std::sqrt(rr) / bnorm;
    }
    rep.converged = true;
    return rep;
}

ControlResult approx_trace_control(const TraceOperator& op, const SpaceTimeField& xi, const TraceTarget& target,
                                   const RegularizationSchedule& schedule, bool allow_disjoint_terminal) {
    if (target.terminal_mode != TerminalMode::None && op.grid().spec.geometric_case == GeometricCase::Disjoint &&
        !allow_disjoint_terminal) {
        throw Error(ErrorCode::GeometryUnsupported, "terminal channel requires intersecting control and observation sets");
    }
    const double eps = schedule.epsilon;
    return run_trace_problem(op, xi, target, schedule, [eps](const ScheduleStep& s) {
        return std::hypot(s.trace_residual, s.terminal_residual) <= eps;
    });
}

ControlResult approx_insensitize(const TraceOperator& op, const SpaceTimeField& xi, double epsilon,
                                 const RegularizationSchedule& schedule) {
    if (!(epsilon > 0.0)) {
        throw Error(ErrorCode::InvalidSpec, "epsilon must be positive");
    }
    const TraceTarget target = TraceTarget::zero(op.grid(), op.time());
    return run_trace_problem(op, xi, target, schedule,
                             [epsilon](const ScheduleStep& s) { return s.kernel_l1 <= epsilon; });
}

ControlResult null_control(const TraceOperator& op, const SpaceTimeField& xi, const RegularizationSchedule& schedule) {
    const auto t0 = std::chrono::steady_clock::now();
    const Grid& g = op.grid();
    const AugmentedTrace base = op.observe(xi, zero_control(g, op.time()));
    const double base_norm = norm(base.terminal, g);
    const double tol = 1e-3 * base_norm;

    TraceTarget target = TraceTarget::zero(g, op.time());
    target.terminal_mode = TerminalMode::Null;
    ControlResult res;
    res.kernel_l1_before = kernel_l1_norm(sensitivity_kernel(base.y, base.z), g.boundary);
    if (base_norm == 0.0) {
        res.h = zero_control(g, op.time());
        res.criteria_met = true;
    } else {
        const Assessor assess = [&](const Control& h) {
            Assessment a;
            a.step = step_from(op.observe(xi, h), target, g);
            a.step.misfit = a.step.terminal_residual * a.step.terminal_residual;
            a.success = a.step.terminal_residual <= tol;
            return a;
        };
        const AugmentedTrace r{BoundaryTrace(op.time(), base.y.points()), BoundaryTrace(op.time(), base.z.points()),
                               TerminalState{-base.terminal.values}};
        absorb(res, sweep(op, r, ChannelWeights{0.0, 0.0, 1.0}, schedule, assess));
    }
    finalize(res, op, xi, target);
    res.wall_seconds = seconds_since(t0);
    return res;
}

ControlResult insensitize_with_terminal(const TraceOperator& op, const SpaceTimeField& xi, const TerminalGoal& goal,
                                        const RegularizationSchedule& schedule, bool allow_disjoint) {
    const Grid& g = op.grid();
    if (g.spec.geometric_case == GeometricCase::Disjoint && !allow_disjoint) {
        throw Error(ErrorCode::GeometryUnsupported,
                    "terminal control combined with insensitizing requires intersecting control and observation sets");
    }
    if (goal.mode == TerminalMode::None) {
        throw Error(ErrorCode::InvalidSpec, "terminal goal needs a terminal mode");
    }
    const auto t0 = std::chrono::steady_clock::now();

    if (goal.mode == TerminalMode::Approximate) {
        if (!goal.y_T) {
            throw Error(ErrorCode::InvalidSpec, "approximate terminal control needs y_T");
        }
        TraceTarget target = TraceTarget::zero(g, op.time());
        target.terminal_mode = TerminalMode::Approximate;
        target.y_T = goal.y_T;
        target.w_trace = goal.w_trace;
        target.w_terminal = goal.w_terminal;
        ControlResult res = run_trace_problem(op, xi, target, schedule, [&goal](const ScheduleStep& s) {
            return traces_small(s, goal) && s.terminal_residual <= goal.terminal_epsilon;
        });
        res.wall_seconds = seconds_since(t0);
        return res;
    }

    // Null path: h = h_nc + h₁ where h₁ solves the homogeneous problem with
    // traces shifted by those of (ξ, h_nc) and a terminal target cancelling y_nc(T).
    ControlResult nc = null_control(op, xi, schedule);
    const AugmentedTrace base = op.observe(xi, zero_control(g, op.time()));
    const double base_terminal = norm(base.terminal, g);
    const AugmentedTrace after_nc = op.observe(xi, nc.h);

    TraceTarget total = TraceTarget::zero(g, op.time());
    total.terminal_mode = TerminalMode::Null;
    total.w_trace = goal.w_trace;
    total.w_terminal = goal.w_terminal;

    ControlResult res;
    res.kernel_l1_before = kernel_l1_norm(sensitivity_kernel(base.y, base.z), g.boundary);
    res.cg_iterations = nc.cg_iterations;
    res.history = nc.history;
    const double terminal_tol = goal.null_reduction * base_terminal;
    const Assessor assess = [&](const Control& h1) {
        Assessment a;
        a.step = step_from(op.observe(xi, nc.h + h1), total, g);
        a.success = traces_small(a.step, goal) && a.step.terminal_residual <= terminal_tol;
        return a;
    };
    const AugmentedTrace r{-1.0 * after_nc.y, -1.0 * after_nc.z, TerminalState{-after_nc.terminal.values}};
    const ChannelWeights w{goal.w_trace, goal.w_trace, goal.w_terminal};
    absorb(res, sweep(op, r, w, schedule, assess));
    res.stages = {nc.h, res.h};
    res.h = nc.h + res.h;
    if (!nc.criteria_met) {
        res.note = "null-control stage: " + nc.note + (res.note.empty() ? "" : "; " + res.note);
    }
    finalize(res, op, xi, total);
    res.wall_seconds = seconds_since(t0);
    return res;
}

Control project_onto_traces(const TraceOperator& op, const Control& h, const TracePair& target,
                            const std::vector<TracePair>& family) {
    const Grid& g = op.grid();
    const auto m = static_cast<Eigen::Index>(family.size());
    if (m == 0) {
        return h;
    }
    std::vector<Control> pre;
    std::vector<TracePair> images;
    pre.reserve(family.size());
    for (const auto& f : family) {
        pre.push_back(op.apply_transpose(f));
        images.push_back(op.apply(pre.back()));
    }
    const TracePair lh = op.apply(h);
    const TracePair gap{target.y - lh.y, target.z - lh.z};
    Eigen::MatrixXd gram(m, m);
    Eigen::VectorXd rhs(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        rhs[i] = inner(family[static_cast<std::size_t>(i)], gap, g);
        for (Eigen::Index j = 0; j < m; ++j) {
            gram(i, j) = inner(family[static_cast<std::size_t>(i)], images[static_cast<std::size_t>(j)], g);
        }
    }
    const Eigen::VectorXd beta = gram.colPivHouseholderQr().solve(rhs);
    Control out = h;
    for (Eigen::Index j = 0; j < m; ++j) {
        out.values += beta[j] * pre[static_cast<std::size_t>(j)].values;
    }
    return out;
}

} // namespace insens
