// Acceptance run: one PASS/FAIL line per criterion A1..A8.
//
// Usage: acceptance [A1 A2 ...]   (no arguments runs everything)

#include "insens/control_approx.hpp"
#include "insens/insens_constructive.hpp"
#include "insens/insens_exact_fd.hpp"
#include "insens/shape.hpp"
#include "support.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace insens;
using namespace testsupport;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
    std::vector<std::string> info; ///< extra context printed under the line
};

void progress(const std::string& what) { std::cerr << "[acceptance] " << what << std::endl; }

double bump(double x, double y, double cx, double cy, double s) {
    return std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2.0 * s * s));
}

// ---------------------------------------------------------------------------
// A1: boundary formula against the re-solve oracle.
// ---------------------------------------------------------------------------

Outcome a1() {
    const auto t0 = Clock::now();
    const int n = 33;
    const double h = 1.0 / (n + 1);
    // Θ edges on cell faces so that the cell-overlap masks agree on the
    // reference grid and on the dilated grids.
    const RegionShape theta = AxisRect{(std::round(0.6 / h) + 0.5) * h, (std::round(0.85 / h) + 0.5) * h,
                                       (std::round(0.3 / h) + 0.5) * h, (std::round(0.7 / h) + 0.5) * h};
    const DomainSpec spec = unit_square(n, AxisRect{0.05, 0.3, 0.1, 0.9}, theta, GeometricCase::Disjoint);
    const TimeAxis t{1.0, 64};
    const SpaceTimeFunction xi = [](double, double x, double y) { return bump(x, y, 0.5, 0.5, 0.12); };
    const SpaceTimeFunction zero = [](double, double, double) { return 0.0; };

    const Grid g = build_grid(spec, MaskRule::CellOverlap);
    const TraceOperator op(propagator(g, t));
    const SensitivityKernel k = cascade_kernel(op, sample(xi, g, t), zero_control(g, t));
    const double formula = directional_derivative(k, PerturbationField::face_dilation(Face::Right), g.boundary);
    const FiniteDifferenceResult fd = finite_difference_dJ(spec, t, xi, zero, Face::Right, {1e-2, 5e-3});
    const double rel_err = std::abs(formula - fd.extrapolated) / std::abs(fd.extrapolated);
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = rel_err <= 0.05 && secs <= 30.0;
    o.detail = fmt("formula %.6e vs Richardson FD %.6e, rel_err %.3e (<= 5e-2), %.1f s (<= 30 s)", formula,
                   fd.extrapolated, rel_err, secs);
    return o;
}

// ---------------------------------------------------------------------------
// A2: ℒ against a dense reimplementation, and the transpose identity.
// ---------------------------------------------------------------------------

/// Dense Crank–Nicolson cascade with its own boundary stencil; returns the
/// stacked (∂ₙy, ∂ₙz, y(T)) for a control given level by level.
struct DenseCascade {
    const Grid& g;
    TimeAxis t;
    Eigen::MatrixXd C;
    Eigen::PartialPivLU<Eigen::MatrixXd> B;
    Eigen::MatrixXd N; ///< boundary samples × nodes

    DenseCascade(const Grid& grid, TimeAxis time) : g(grid), t(time) {
        const int n = g.num_nodes();
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
        for (int j = 1; j <= g.ny(); ++j) {
            for (int i = 1; i <= g.nx(); ++i) {
                const int k = g.node(i, j);
                A(k, k) = -2.0 / (g.hx * g.hx) - 2.0 / (g.hy * g.hy);
                if (i > 1) A(k, g.node(i - 1, j)) = 1.0 / (g.hx * g.hx);
                if (i < g.nx()) A(k, g.node(i + 1, j)) = 1.0 / (g.hx * g.hx);
                if (j > 1) A(k, g.node(i, j - 1)) = 1.0 / (g.hy * g.hy);
                if (j < g.ny()) A(k, g.node(i, j + 1)) = 1.0 / (g.hy * g.hy);
            }
        }
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
        C = I + 0.5 * t.dt() * A;
        B.compute(I - 0.5 * t.dt() * A);
        N = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.boundary.size()), n);
        for (std::size_t p = 0; p < g.boundary.size(); ++p) {
            const BoundaryPoint& bp = g.boundary.points[p];
            N(static_cast<Eigen::Index>(p), bp.inner1) = -4.0 / (2.0 * bp.h_normal);
            N(static_cast<Eigen::Index>(p), bp.inner2) = 1.0 / (2.0 * bp.h_normal);
        }
    }

    Eigen::VectorXd apply(const Eigen::MatrixXd& h) const {
        const int L = t.levels(), n = g.num_nodes();
        Eigen::MatrixXd f = Eigen::MatrixXd::Zero(n, L);
        for (std::size_t c = 0; c < g.omega_nodes.size(); ++c) {
            const int k = g.omega_nodes[c];
            f.row(k) = g.omega_mask[k] * h.row(static_cast<Eigen::Index>(c));
        }
        Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, L), z = Eigen::MatrixXd::Zero(n, L);
        for (int s = 0; s < t.steps; ++s) {
            y.col(s + 1) = B.solve(C * y.col(s) + 0.5 * t.dt() * (f.col(s) + f.col(s + 1)));
        }
        const Eigen::MatrixXd src = g.theta_mask.asDiagonal() * y;
        for (int s = t.steps; s > 0; --s) {
            z.col(s - 1) = B.solve(C * z.col(s) + 0.5 * t.dt() * (src.col(s) + src.col(s - 1)));
        }
        const Eigen::MatrixXd ty = N * y, tz = N * z;
        Eigen::VectorXd out(ty.size() + tz.size() + n);
        out << ty.reshaped(), tz.reshaped(), y.col(t.steps);
        return out;
    }
};

Outcome a2() {
    const auto t0 = Clock::now();
    double worst_col = 0.0, worst_adj = 0.0, worst_adj_aug = 0.0;
    for (const DomainSpec& spec : {disjoint_square(9), intersecting_square(9)}) {
        const Grid g = build_grid(spec);
        const TimeAxis t{1.0, 8};
        const TraceOperator op(propagator(g, t));
        const DenseCascade dense(g, t);
        const Control shape = zero_control(g, t);
        for (Eigen::Index c = 0; c < shape.values.size(); ++c) {
            Control e = shape;
            e.values.data()[c] = 1.0;
            const AugmentedTrace a = op.apply_augmented(e);
            Eigen::VectorXd v(a.y.values.size() + a.z.values.size() + a.terminal.values.size());
            v << a.y.values.reshaped(), a.z.values.reshaped(), a.terminal.values;
            const Eigen::VectorXd ref = dense.apply(e.values);
            worst_col = std::max(worst_col, (v - ref).norm() / std::max(ref.norm(), 1e-300));
        }
        std::mt19937_64 rng(2024);
        std::normal_distribution<double> nd(0.0, 1.0);
        for (int trial = 0; trial < 20; ++trial) {
            const Control h = random_like(shape, rng);
            const AugmentedTrace lh = op.apply_augmented(h);
            AugmentedTrace gtr{random_like(lh.y, rng), random_like(lh.z, rng), lh.terminal};
            for (Eigen::Index i = 0; i < gtr.terminal.values.size(); ++i) {
                gtr.terminal.values[i] = nd(rng);
            }
            const TracePair lp{lh.y, lh.z}, gp{gtr.y, gtr.z};
            const double l1 = inner(lp, gp, g), r1 = inner(h, op.apply_transpose(gp), g);
            worst_adj = std::max(worst_adj, std::abs(l1 - r1) / std::abs(l1));
            const double l2 = inner(lh, gtr, g), r2 = inner(h, op.apply_augmented_transpose(gtr), g);
            worst_adj_aug = std::max(worst_adj_aug, std::abs(l2 - r2) / std::abs(l2));
        }
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = worst_col <= 1e-12 && worst_adj <= 1e-10 && worst_adj_aug <= 1e-10 && secs <= 10.0;
    o.detail = fmt("columns vs dense CN %.2e (<= 1e-12), <Lh,g>-<h,L'g> %.2e, augmented %.2e (<= 1e-10), %.1f s "
                   "(<= 10 s)",
                   worst_col, worst_adj, worst_adj_aug, secs);
    return o;
}

// ---------------------------------------------------------------------------
// A3: approximate insensitizing, disjoint control and observation sets.
// ---------------------------------------------------------------------------

struct CaseOne {
    Grid g = build_grid(disjoint_square(33));
    SpaceTimeField xi(const TimeAxis& t) const { return gaussian_source(g, t, 0.5, 0.5, 0.1, 10.0); }
};

double fresh_kernel_l1(const TraceOperator& op, const SpaceTimeField& xi, const Control& h) {
    const AugmentedTrace tr = op.observe(xi, h);
    return kernel_l1_norm(sensitivity_kernel(tr.y, tr.z), op.grid().boundary);
}

double a3_level = 0.0; // kernel L¹ reached in A3, reused by A6

Outcome a3() {
    const auto t0 = Clock::now();
    const CaseOne c;
    const TimeAxis t{1.0, 64};
    const TraceOperator op(propagator(c.g, t));
    const SpaceTimeField xi = c.xi(t);
    // ε far below reach: the full α schedule runs.
    const ControlResult r = approx_insensitize(op, xi, 1e-12, RegularizationSchedule::geometric());
    const double before = fresh_kernel_l1(op, xi, zero_control(c.g, t));
    const double after = fresh_kernel_l1(op, xi, r.h);
    a3_level = after;
    bool monotone = true;
    for (std::size_t i = 1; i < r.history.size(); ++i) {
        monotone = monotone && r.history[i].misfit <= r.history[i - 1].misfit * (1.0 + 1e-12);
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = after <= 0.1 * before && monotone && secs <= 300.0;
    o.detail = fmt("kernel L1 %.3e -> %.3e (ratio %.2e <= 0.1), misfit nonincreasing over %zu stages: %s, %.1f s "
                   "(<= 300 s)",
                   before, after, after / before, r.history.size(), monotone ? "yes" : "no", secs);
    return o;
}

// ---------------------------------------------------------------------------
// A4: insensitizing with a terminal goal, intersecting sets.
// ---------------------------------------------------------------------------

Outcome a4() {
    const Grid g = build_grid(intersecting_square(33));
    const TimeAxis t{1.0, 64};
    const TraceOperator op(propagator(g, t));
    const SpaceTimeField xi = gaussian_source(g, t, 0.5, 0.5, 0.1, 10.0);
    const AugmentedTrace base = op.observe(xi, zero_control(g, t));
    const double k0 = kernel_l1_norm(sensitivity_kernel(base.y, base.z), g.boundary);
    const double term0 = norm(base.terminal, g);

    TerminalGoal approx;
    approx.mode = TerminalMode::Approximate;
    approx.y_T = TerminalState{0.1 * sine_mode(g, 1, 1)};
    const double eps = 0.05 * norm(*approx.y_T, g);
    approx.terminal_epsilon = eps;
    approx.kernel_epsilon = 0.1 * k0;
    approx.w_terminal = 1000.0;
    const ControlResult ra = insensitize_with_terminal(op, xi, approx, RegularizationSchedule::geometric());
    const AugmentedTrace fa = op.observe(xi, ra.h);
    const double ka = kernel_l1_norm(sensitivity_kernel(fa.y, fa.z), g.boundary);
    TerminalState d = fa.terminal;
    d.values -= approx.y_T->values;
    const double ta = norm(d, g);

    TerminalGoal null;
    null.mode = TerminalMode::Null;
    null.kernel_epsilon = 0.2 * k0;
    const ControlResult rn = insensitize_with_terminal(op, xi, null, RegularizationSchedule::geometric());
    const AugmentedTrace fn = op.observe(xi, rn.h);
    const double kn = kernel_l1_norm(sensitivity_kernel(fn.y, fn.z), g.boundary);
    const double tn = norm(fn.terminal, g);

    const bool pa = k0 / ka >= 10.0 && ta <= eps;
    const bool pn = term0 / tn >= 1000.0 && k0 / kn >= 5.0;
    Outcome o;
    o.pass = pa && pn;
    o.detail = fmt("approximate: kernel reduction %.1fx (>= 10), |y(T)-y_T| %.3e (<= %.3e); null: |y(T)| reduction "
                   "%.0fx (>= 1000), kernel reduction %.1fx (>= 5)",
                   k0 / ka, ta, eps, term0 / tn, k0 / kn);
    return o;
}

// ---------------------------------------------------------------------------
// A6: exact insensitizing over face dilations.
// ---------------------------------------------------------------------------

struct ExactRun {
    int M = 0;
    ExactResult r;
    double kernel = 0.0;
    double worst_U = 0.0; ///< max_k |U_k| / max(1, |c_k|)
    double seconds = 0.0;
};

std::vector<ExactRun> exact_runs;

/// U_k from raw traces of a fresh cascade and the basis traces w_k.
Eigen::VectorXd independent_U(const TraceOperator& op, const SpaceTimeField& xi, const Control& h,
                              const DirectionBasis& basis) {
    const Grid& g = op.grid();
    const AugmentedTrace tr = op.observe(xi, h);
    Eigen::VectorXd U = Eigen::VectorXd::Zero(basis.size());
    for (int k = 0; k < basis.size(); ++k) {
        for (std::size_t p = 0; p < g.boundary.size(); ++p) {
            const auto pi = static_cast<Eigen::Index>(p);
            double time_integral = 0.0;
            for (int n = 0; n < op.time().levels(); ++n) {
                time_integral += op.time().weight(n) * tr.y.values(pi, n) * tr.z.values(pi, n);
            }
            U[k] += basis.w[static_cast<std::size_t>(k)][pi] * g.boundary.points[p].weight * time_integral;
        }
    }
    return U;
}

Outcome a6() {
    if (a3_level == 0.0) {
        progress("A6 needs the A3 level; running A3 first");
        (void)a3();
    }
    const double eps = 10.0 * a3_level;
    const CaseOne c;
    Outcome o;
    o.pass = true;
    std::string parts;
    for (const int M : {1, 2}) {
        const auto t0 = Clock::now();
        std::vector<PerturbationField> dirs{PerturbationField::face_dilation(Face::Right)};
        if (M == 2) {
            dirs.push_back(PerturbationField::face_dilation(Face::Top));
        }
        const TimeAxis t = aligned_time({1.0, 64}, M);
        const TraceOperator op(propagator(c.g, t));
        const SpaceTimeField xi = c.xi(t);
        ExactOptions opt;
        opt.epsilon = eps;
        opt.parallel = true;
        opt.strict = false;
        ExactRun run;
        run.M = M;
        run.r = exact_insensitize(op, xi, dirs, opt);
        run.kernel = fresh_kernel_l1(op, xi, run.r.h);
        const Eigen::VectorXd U = independent_U(op, xi, run.r.h, run.r.basis);
        for (int k = 0; k < M; ++k) {
            run.worst_U = std::max(run.worst_U, std::abs(U[k]) / std::max(1.0, std::abs(run.r.system.c[k])));
        }
        run.seconds = seconds_since(t0);
        const bool ok = run.worst_U <= 1e-6 && run.kernel <= eps;
        o.pass = o.pass && ok;
        parts += fmt("%sM=%d: max|U_k|/max(1,|c_k|) %.2e (<= 1e-6), kernel L1 %.3e (<= %.3e)", M == 1 ? "" : "; ", M,
                     run.worst_U, run.kernel, eps);
        o.info.push_back(fmt("M=%d: lambda method %s, |lambda| %.3e, stage-1 trace norm %.3e, q-deviation %.3f, "
                             "%.0f s%s%s",
                             M, std::string(to_string(run.r.lambda.method)).c_str(), run.r.lambda.lambda.norm(),
                             run.r.stage1_trace_norm, run.r.q_deviation, run.seconds,
                             run.r.note.empty() ? "" : ", note: ", run.r.note.c_str()));
        exact_runs.push_back(std::move(run));
    }

    // Idealized systems U_k = λ_k|λ_k| + c_k.
    const auto ideal = [](const Eigen::VectorXd& c) {
        QLCSystem s;
        s.M = static_cast<int>(c.size());
        for (int k = 0; k < s.M; ++k) {
            Eigen::MatrixXd P = Eigen::MatrixXd::Zero(2 * s.M, 2 * s.M);
            P(2 * k, 2 * k + 1) = P(2 * k + 1, 2 * k) = 1.0;
            s.P.push_back(P);
            s.l.push_back(Eigen::VectorXd::Zero(2 * s.M));
        }
        s.c = c;
        return s;
    };
    LambdaSolveOptions tight;
    tight.tol_U = 1e-14;
    const LambdaSolveReport l1 = solve_lambda(ideal(Eigen::VectorXd::Constant(1, -1.0)), tight);
    const LambdaSolveReport l2 = solve_lambda(ideal(Eigen::Vector2d(-1.0, -4.0)), tight);
    const double e1 = std::abs(l1.lambda[0] - 1.0);
    const double e2 = (l2.lambda - Eigen::Vector2d(1.0, 2.0)).cwiseAbs().maxCoeff();
    const bool ideal_ok = e1 <= 1e-12 && e2 <= 1e-12;
    o.pass = o.pass && ideal_ok;
    o.detail = parts + fmt("; ideal systems: |lambda-1| %.1e, |lambda-(1,2)| %.1e (<= 1e-12)", e1, e2);
    o.info.insert(o.info.begin(), fmt("epsilon = 10 x A3 level %.3e = %.3e", a3_level, eps));
    return o;
}

// ---------------------------------------------------------------------------
// A5: γ identity and q-deviation after synthesis.
// ---------------------------------------------------------------------------

Outcome a5() {
    if (exact_runs.empty()) {
        progress("A5 reuses the A6 basis controls; running A6 first");
        (void)a6();
    }
    const CaseOne c;
    const Grid& g = c.g;
    double worst_identity = 0.0;
    const std::vector<PerturbationField> all{PerturbationField::face_dilation(Face::Right),
                                             PerturbationField::face_dilation(Face::Top),
                                             PerturbationField::face_dilation(Face::Left)};
    for (int M = 1; M <= 3; ++M) {
        const std::vector<PerturbationField> dirs(all.begin(), all.begin() + M);
        const DirectionBasis basis = orthonormalize_normal_traces(dirs, g.boundary);
        const TimeAxis t = aligned_time({1.0, 64}, M);
        const GammaTargets gam = build_gamma_targets(basis, g.boundary, t);
        // ∫ w_k ∫ (γ_{i,a,y}γ_{j,b,z} + γ_{j,b,y}γ_{i,a,z}) dt dσ summed by hand.
        for (int k = 0; k < M; ++k) {
            for (int i = 0; i < M; ++i) {
                for (int j = 0; j < M; ++j) {
                    for (int a = 0; a < 2; ++a) {
                        for (int b = 0; b < 2; ++b) {
                            const auto& yi = gam.y[static_cast<std::size_t>(2 * i + a)].values;
                            const auto& zi = gam.z[static_cast<std::size_t>(2 * i + a)].values;
                            const auto& yj = gam.y[static_cast<std::size_t>(2 * j + b)].values;
                            const auto& zj = gam.z[static_cast<std::size_t>(2 * j + b)].values;
                            double v = 0.0;
                            for (std::size_t p = 0; p < g.boundary.size(); ++p) {
                                const auto pi = static_cast<Eigen::Index>(p);
                                double s = 0.0;
                                for (int n = 0; n < t.levels(); ++n) {
                                    s += t.weight(n) * (yi(pi, n) * zj(pi, n) + yj(pi, n) * zi(pi, n));
                                }
                                v += basis.w[static_cast<std::size_t>(k)][pi] * g.boundary.points[p].weight * s;
                            }
                            const double expected = (i == j && j == k && a != b) ? 1.0 : 0.0;
                            worst_identity = std::max(worst_identity, std::abs(v - expected));
                        }
                    }
                }
            }
        }
    }
    Outcome o;
    std::string q;
    bool q_ok = true;
    for (const ExactRun& r : exact_runs) {
        const double target = 1.0 / (4.0 * r.M * r.M);
        q_ok = q_ok && r.r.q_deviation <= target;
        q += fmt(", M=%d %.3f (<= %.4f)", r.M, r.r.q_deviation, target);
    }
    o.pass = worst_identity <= 1e-8 && q_ok;
    o.detail = fmt("identity tensor max deviation %.2e over M=1,2,3 (<= 1e-8); q-deviation after synthesis", worst_identity) + q;
    if (!q_ok) {
        o.info.push_back("the basis controls reach the y-trace targets but their z-traces stay near zero: the "
                         "observation set is separated from the control set and the z-trace gain of L is about 1e-3, "
                         "so the assembled quadratic forms keep the cross terms near 0 instead of 1");
    }
    return o;
}

// ---------------------------------------------------------------------------
// A7: constructive controls.
// ---------------------------------------------------------------------------

Outcome a7() {
    Outcome o;
    // Θ ⋐ ω.
    const Grid g = build_grid(unit_square(33, AxisRect{0.1, 0.9, 0.1, 0.9}, AxisRect{0.35, 0.65, 0.35, 0.65},
                                          GeometricCase::Intersecting));
    const TimeAxis t{1.0, 64};
    const HeatPropagator heat(g, t);
    const TraceOperator op(propagator(g, t));
    const SpaceTimeField xi = gaussian_source(g, t, 0.3, 0.5, 0.1, 10.0);
    ConstructiveOptions lax;
    lax.strict = false;
    const ConstructionReport r = construct_theta_in_omega(heat, xi, lax);
    const double y_sup = r.y0.values.cwiseAbs().maxCoeff();
    const double scale = fresh_kernel_l1(op, xi, zero_control(g, t));
    const double kernel = fresh_kernel_l1(op, xi, r.h);
    // Support audit straight from the masks.
    bool support = true;
    const SpaceTimeField H = heat.embed(r.h);
    for (int k = 0; k < g.num_nodes(); ++k) {
        if (g.omega_mask[k] == 0.0 && H.values.row(k).cwiseAbs().maxCoeff() != 0.0) {
            support = false;
        }
    }
    const bool p17 = r.z0_sup <= 1e-13 * y_sup && kernel <= 1e-12 * scale && support;

    // ∂Θ ⊂ ω, one refinement level.
    std::vector<double> ratios;
    bool support_b = true;
    for (const int level : {0, 1}) {
        const int n = level == 0 ? 33 : 65;
        const Grid gb = build_grid(unit_square(n, Annulus{0.5, 0.5, 0.07, 0.43}, Disk{0.5, 0.5, 0.25},
                                               GeometricCase::Intersecting));
        const TimeAxis tb{1.0, level == 0 ? 64 : 128};
        const HeatPropagator hb(gb, tb);
        SpaceTimeField xb = gaussian_source(gb, tb, 0.5, 0.5, 0.03, 10.0);
        for (int l = 0; l < tb.levels(); ++l) {
            if (tb.time(l) < 0.5) {
                xb.values.col(l).setZero();
            }
        }
        const ConstructionReport rb = construct_boundary_theta(hb, xb, lax);
        support_b = support_b && rb.support_ok;
        ratios.push_back(rb.z0_outside / rb.z0_sup);
        if (level == 0) {
            o.info.push_back(fmt("boundary construction, 33x33: kernel L1 %.3e vs %.3e uncontrolled, y0 initial defect "
                                 "%.1e",
                                 rb.kernel_l1, rb.kernel_l1_uncontrolled, rb.initial_defect));
        }
    }
    const bool p18 = ratios[0] <= 1e-3 && ratios[1] < ratios[0] && support_b;
    o.pass = p17 && p18;
    o.detail = fmt("theta in omega: sup|z0| %.1e (<= 1e-13 x sup|y0| = %.1e), kernel L1 %.1e (<= 1e-12 x %.2e), "
                   "support in omega: %s; boundary theta: sup|z0| outside theta / sup|z0| %.2e (<= 1e-3) -> %.2e "
                   "refined, support in omega: %s",
                   r.z0_sup, 1e-13 * y_sup, kernel, scale, support ? "yes" : "no", ratios[0], ratios[1],
                   support_b ? "yes" : "no");
    o.info.push_back("boundary construction source switched on at t = 0.5 (supported inside the hole of omega)");

    // Same construction with the source active from t = 0, for context.
    const Grid gb = build_grid(unit_square(33, Annulus{0.5, 0.5, 0.07, 0.43}, Disk{0.5, 0.5, 0.25},
                                           GeometricCase::Intersecting));
    const HeatPropagator hb(gb, t);
    const ConstructionReport early = construct_boundary_theta(hb, gaussian_source(gb, t, 0.5, 0.5, 0.03, 10.0), lax);
    o.info.push_back(fmt("with the source active from t = 0 the ratio is %.2e: the target state starts at %.2f of its "
                         "peak level norm instead of 0",
                         early.z0_outside / early.z0_sup, early.initial_defect));
    return o;
}

// ---------------------------------------------------------------------------
// A8: solver orders.
// ---------------------------------------------------------------------------

Outcome a8() {
    const Grid g = build_grid(disjoint_square(9));
    const double lam = discrete_eigenvalue(g, 1, 1);
    const Eigen::VectorXd e1 = sine_mode(g, 1, 1);
    std::vector<double> ef, eb;
    for (const int steps : {16, 32, 64}) {
        const TimeAxis t{1.0, steps};
        const HeatPropagator heat(g, t);
        SpaceTimeField xi = zero_field(g, t), s = zero_field(g, t);
        for (int n = 0; n < t.levels(); ++n) {
            xi.level(n) = lam * e1;
            s.level(n) = e1;
        }
        const SpaceTimeField y = solve_forward(heat, xi, zero_control(g, t));
        const SpaceTimeField z = solve_backward(heat, s);
        double mf = 0.0, mb = 0.0;
        for (int n = 0; n < t.levels(); ++n) {
            mf = std::max(mf, (y.level(n) - (1.0 - std::exp(-lam * t.time(n))) * e1).cwiseAbs().maxCoeff());
            mb = std::max(mb, (z.level(n) - (1.0 - std::exp(-lam * (1.0 - t.time(n)))) / lam * e1)
                                  .cwiseAbs()
                                  .maxCoeff());
        }
        ef.push_back(mf);
        eb.push_back(mb);
    }
    const double pi = std::numbers::pi;
    std::vector<double> es;
    for (const int n : {15, 31, 63}) {
        const Grid gs = build_grid(disjoint_square(n));
        const TimeAxis t{1.0, 1};
        SpaceTimeField u = zero_field(gs, t);
        for (int k = 0; k < gs.num_nodes(); ++k) {
            u.values(k, 0) = u.values(k, 1) = std::sin(pi * gs.x[k]) * std::sin(pi * gs.y[k]);
        }
        const BoundaryTrace tr = neumann_trace(u, gs);
        double err = 0.0;
        for (std::size_t p = 0; p < gs.boundary.size(); ++p) {
            const auto& bp = gs.boundary.points[p];
            if (bp.face == Face::Left) {
                err = std::max(err, std::abs(tr.values(static_cast<Eigen::Index>(p), 0) + pi * std::sin(pi * bp.y)));
            }
        }
        es.push_back(err);
    }
    const auto order = [](const std::vector<double>& e, std::size_t i) { return std::log2(e[i] / e[i + 1]); };
    const double of = std::min(order(ef, 0), order(ef, 1));
    const double ob = std::min(order(eb, 0), order(eb, 1));
    const double os = std::min(order(es, 0), order(es, 1));
    Outcome o;
    o.pass = of >= 1.9 && ob >= 1.9 && os >= 1.9;
    o.detail = fmt("temporal order forward %.3f, backward %.3f; Neumann spatial order %.3f (all >= 1.9)", of, ob, os);
    return o;
}

} // namespace

int main(int argc, char** argv) {
    std::set<std::string> wanted;
    for (int i = 1; i < argc; ++i) {
        wanted.insert(argv[i]);
    }
    const std::vector<std::pair<std::string, Outcome (*)()>> criteria{
        {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5}, {"A6", a6}, {"A7", a7}, {"A8", a8}};
    // A6 reuses the A3 level and A5 reuses the A6 runs, so they run in that order.
    const std::vector<std::string> run_order{"A8", "A2", "A1", "A7", "A3", "A4", "A6", "A5"};
    std::map<std::string, Outcome> results;
    for (const std::string& name : run_order) {
        if (!wanted.empty() && !wanted.contains(name)) {
            continue;
        }
        progress("running " + name);
        const auto fn = std::find_if(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; });
        try {
            results[name] = fn->second();
        } catch (const std::exception& e) {
            results[name] = Outcome{false, std::string("error: ") + e.what(), {}};
        }
    }
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        const auto it = results.find(name);
        if (it == results.end()) {
            continue;
        }
        const Outcome& o = it->second;
        failed += o.pass ? 0 : 1;
        std::cout << name << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << '\n';
        for (const std::string& line : o.info) {
            std::cout << "     " << line << '\n';
        }
    }
    std::cout << results.size() - failed << " of " << results.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
