#include "insens/insens_exact_fd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <random>

namespace insens {

namespace {

double dsigma_inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const BoundaryGeometry& geom) {
    double s = 0.0;
    for (std::size_t p = 0; p < geom.size(); ++p) {
        const auto i = static_cast<Eigen::Index>(p);
        s += geom.points[p].weight * a[i] * b[i];
    }
    return s;
}

double signed_sqrt(double v) { return v >= 0.0 ? std::sqrt(v) : -std::sqrt(-v); }

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double pair_norm(const TracePair& t, const Grid& g) { return std::hypot(norm(t.y, g), norm(t.z, g)); }

Eigen::VectorXd mu_of(const Eigen::VectorXd& lambda) {
    Eigen::VectorXd mu(2 * lambda.size());
    for (Eigen::Index j = 0; j < lambda.size(); ++j) {
        mu[2 * j] = lambda[j];
        mu[2 * j + 1] = std::abs(lambda[j]);
    }
    return mu;
}

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

} // namespace

DirectionBasis orthonormalize_normal_traces(const std::vector<PerturbationField>& directions,
                                            const BoundaryGeometry& b) {
    DirectionBasis out;
    out.directions = directions;
    const auto n = static_cast<Eigen::Index>(directions.size());
    std::vector<Eigen::VectorXd> raw;
    raw.reserve(directions.size());
    for (const auto& d : directions) {
        raw.push_back(normal_component(d, b));
    }
    // Rows of `coef` express each accepted w_k in terms of the raw traces.
    std::vector<Eigen::VectorXd> coef;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd v = raw[static_cast<std::size_t>(i)];
        const double initial = std::sqrt(dsigma_inner(v, v, b));
        if (initial == 0.0) {
            continue;
        }
        Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
        c[i] = 1.0;
        for (std::size_t k = 0; k < out.w.size(); ++k) {
            const double proj = dsigma_inner(out.w[k], v, b);
            v -= proj * out.w[k];
            c -= proj * coef[k];
        }
        const double remaining = std::sqrt(dsigma_inner(v, v, b));
        if (remaining < 1e-10 * initial) {
            continue;
        }
        out.w.push_back(v / remaining);
        coef.push_back(c / remaining);
        out.kept.push_back(static_cast<int>(i));
    }
    if (out.w.empty()) {
        throw Error(ErrorCode::AllDirectionsTangent, "every direction has a vanishing normal component");
    }
    out.coefficients.resize(static_cast<Eigen::Index>(coef.size()), n);
    for (std::size_t k = 0; k < coef.size(); ++k) {
        out.coefficients.row(static_cast<Eigen::Index>(k)) = coef[k].transpose();
    }
    return out;
}

TimeAxis aligned_time(const TimeAxis& time, int M) {
    const int block = 2 * M;
    TimeAxis t = time;
    t.steps = ((time.steps + block - 1) / block) * block;
    return t;
}

GammaTargets build_gamma_targets(const DirectionBasis& basis, const BoundaryGeometry& b, const TimeAxis& time,
                                 double scale) {
    if (!(scale > 0.0)) {
        throw Error(ErrorCode::InvalidSpec, "gamma scale must be positive");
    }
    const int M = basis.size();
    if (M <= 0) {
        throw Error(ErrorCode::InvalidSpec, "empty direction basis");
    }
    if (time.steps % (2 * M) != 0) {
        throw Error(ErrorCode::BadTimeDivision,
                    "step count " + std::to_string(time.steps) + " is not divisible by " + std::to_string(2 * M));
    }
    GammaTargets g;
    g.M = M;
    g.scale = scale;
    g.time = time;
    const int L = time.steps / (2 * M);
    for (int j = 0; j < 2 * M; ++j) {
        g.half_windows.push_back({j * L, j == 2 * M - 1 ? time.steps : (j + 1) * L - 1});
    }
    const auto np = static_cast<Eigen::Index>(b.size());
    const auto indicator = [&](int j) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(time.levels());
        for (int n = g.half_windows[j][0]; n <= g.half_windows[j][1]; ++n) {
            v[n] = 1.0;
        }
        return v;
    };
    const auto measure = [&](int j) {
        double m = 0.0;
        for (int n = g.half_windows[j][0]; n <= g.half_windows[j][1]; ++n) {
            m += time.weight(n);
        }
        return m;
    };
    for (int k = 0; k < M; ++k) {
        const Eigen::VectorXd A = indicator(2 * k);
        const Eigen::VectorXd B = indicator(2 * k + 1);
        const double sy = scale / (measure(2 * k) + measure(2 * k + 1));
        const double sz = 1.0 / scale;
        const Eigen::VectorXd& w = basis.w[static_cast<std::size_t>(k)];
        // a = 0: y on the first half, z on the second; a = 1 swaps them.
        g.y.emplace_back(time, Eigen::MatrixXd(sy * w * A.transpose()));
        g.z.emplace_back(time, Eigen::MatrixXd(sz * Eigen::VectorXd::Ones(np) * B.transpose()));
        g.y.emplace_back(time, Eigen::MatrixXd(sy * w * B.transpose()));
        g.z.emplace_back(time, Eigen::MatrixXd(sz * Eigen::VectorXd::Ones(np) * A.transpose()));
    }
    return g;
}

double boundary_time_pairing(const Eigen::VectorXd& w, const BoundaryTrace& a, const BoundaryTrace& b,
                             const BoundaryGeometry& geom) {
    a.check_compatible(b);
    require_size(static_cast<std::size_t>(w.size()), geom.size(), "boundary weight");
    require_size(static_cast<std::size_t>(a.points()), geom.size(), "trace points");
    const Eigen::VectorXd tw = a.time.weights();
    double s = 0.0;
    for (Eigen::Index p = 0; p < a.points(); ++p) {
        double row = 0.0;
        for (int n = 0; n < a.time.levels(); ++n) {
            row += tw[n] * a.values(p, n) * b.values(p, n);
        }
        s += geom.points[static_cast<std::size_t>(p)].weight * w[p] * row;
    }
    return s;
}

std::vector<double> gamma_identity(const GammaTargets& g, const DirectionBasis& basis, const BoundaryGeometry& b) {
    const int M = g.M;
    std::vector<double> out(static_cast<std::size_t>(M * M * M * 4));
    for (int k = 0; k < M; ++k) {
        const Eigen::VectorXd& w = basis.w[static_cast<std::size_t>(k)];
        for (int i = 0; i < M; ++i) {
            for (int j = 0; j < M; ++j) {
                for (int a = 0; a < 2; ++a) {
                    for (int c = 0; c < 2; ++c) {
                        const auto ia = static_cast<std::size_t>(2 * i + a);
                        const auto jb = static_cast<std::size_t>(2 * j + c);
                        const double v = boundary_time_pairing(w, g.y[ia], g.z[jb], b) +
                                         boundary_time_pairing(w, g.y[jb], g.z[ia], b);
                        out[static_cast<std::size_t>((((k * M + i) * M + j) * 2 + a) * 2 + c)] = v;
                    }
                }
            }
        }
    }
    return out;
}

double BasisControls::max_error() const {
    double m = 0.0;
    for (std::size_t i = 0; i < error_y.size(); ++i) {
        m = std::max(m, error_y[i] + error_z[i]);
    }
    return m;
}

BasisControls compute_basis_controls(const TraceOperator& op, const GammaTargets& targets,
                                     const RegularizationSchedule& schedule, const BasisControlOptions& options) {
    schedule.validate();
    if (!(targets.time == op.time())) {
        throw Error(ErrorCode::DimensionMismatch, "gamma targets and propagator use different time axes");
    }
    const Grid& g = op.grid();
    const std::size_t count = targets.y.size();
    const ChannelWeights w{1.0, 1.0, options.terminal_bound ? options.w_terminal : 0.0};
    const TerminalState zero_terminal{Eigen::VectorXd::Zero(g.num_nodes())};

    BasisControls bc;
    bc.M = targets.M;
    std::vector<Control> h(count, zero_control(g, op.time()));
    const auto accept = options.accept ? options.accept : [eps = schedule.epsilon](const BasisControls& s) {
        return s.max_error() <= eps;
    };

    for (const double alpha : schedule.alphas) {
        std::vector<CGReport> reports(count);
        const auto solve_one = [&](std::size_t i) {
            const AugmentedTrace r{targets.y[i], targets.z[i], zero_terminal};
            reports[i] = tikhonov_solve(op, r, w, alpha, h[i], schedule.cg_tol, schedule.cg_maxit);
        };
        if (options.parallel) {
            std::vector<std::future<void>> jobs;
            for (std::size_t i = 0; i < count; ++i) {
                jobs.push_back(std::async(std::launch::async, solve_one, i));
            }
            for (auto& j : jobs) {
                j.get();
            }
        } else {
            for (std::size_t i = 0; i < count; ++i) {
                solve_one(i);
            }
        }
        bool all_converged = true;
        for (const auto& r : reports) {
            bc.cg_iterations += r.iterations;
            all_converged = all_converged && r.converged;
        }
        if (!all_converged) {
            bc.note = fmt("conjugate gradients stalled at alpha=%.3g; keeping the previous stage", alpha);
            break;
        }
        BasisControls stage = bc;
        stage.h = h;
        stage.alpha = alpha;
        stage.traces.clear();
        stage.error_y.clear();
        stage.error_z.clear();
        stage.terminal.clear();
        for (std::size_t i = 0; i < count; ++i) {
            const AugmentedTrace tr = op.apply_augmented(h[i]);
            stage.error_y.push_back(norm(tr.y - targets.y[i], g));
            stage.error_z.push_back(norm(tr.z - targets.z[i], g));
            stage.terminal.push_back(norm(tr.terminal, g));
            stage.traces.push_back({tr.y, tr.z});
        }
        stage.alpha_history.push_back(alpha);
        stage.error_history.push_back(stage.max_error());
        bc = std::move(stage);
        if (accept(bc)) {
            return bc;
        }
    }
    if (bc.h.empty()) {
        throw Error(ErrorCode::SolverFailure, bc.note.empty() ? "no basis control converged" : bc.note);
    }
    bc.target_unreachable = true;
    if (bc.note.empty()) {
        bc.note = "schedule exhausted before the basis controls met the acceptance test";
    }
    return bc;
}

QLCSystem assemble_QLC(const DirectionBasis& basis, const std::vector<TracePair>& basis_traces,
                       const TracePair& xi_traces, const BoundaryGeometry& b) {
    const int M = basis.size();
    require_size(basis_traces.size(), static_cast<std::size_t>(2 * M), "basis traces");
    QLCSystem s;
    s.M = M;
    s.basis_traces = basis_traces;
    s.xi_traces = xi_traces;
    s.c.resize(M);
    const int n = 2 * M;
    for (int k = 0; k < M; ++k) {
        const Eigen::VectorXd& w = basis.w[static_cast<std::size_t>(k)];
        Eigen::MatrixXd cross(n, n); // ∫w ∫ ∂y_p ∂z_q
        Eigen::VectorXd l(n);
        for (int p = 0; p < n; ++p) {
            const TracePair& tp = basis_traces[static_cast<std::size_t>(p)];
            for (int q = 0; q < n; ++q) {
                cross(p, q) = boundary_time_pairing(w, tp.y, basis_traces[static_cast<std::size_t>(q)].z, b);
            }
            l[p] = boundary_time_pairing(w, xi_traces.y, tp.z, b) + boundary_time_pairing(w, tp.y, xi_traces.z, b);
        }
        s.P.push_back(cross + cross.transpose());
        s.l.push_back(l);
        s.c[k] = boundary_time_pairing(w, xi_traces.y, xi_traces.z, b);
    }
    return s;
}

double QLCSystem::max_q_deviation() const {
    double dev = 0.0;
    for (int k = 0; k < M; ++k) {
        Eigen::MatrixXd ideal = Eigen::MatrixXd::Zero(2 * M, 2 * M);
        ideal(2 * k, 2 * k + 1) = ideal(2 * k + 1, 2 * k) = 1.0;
        dev = std::max(dev, (P[static_cast<std::size_t>(k)] - ideal).cwiseAbs().maxCoeff());
    }
    return dev;
}

Eigen::VectorXd evaluate_U(const QLCSystem& system, const Eigen::VectorXd& lambda) {
    require_size(static_cast<std::size_t>(lambda.size()), static_cast<std::size_t>(system.M), "lambda");
    const Eigen::VectorXd mu = mu_of(lambda);
    Eigen::VectorXd u(system.M);
    for (int k = 0; k < system.M; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        u[k] = 0.5 * mu.dot(system.P[kk] * mu) + system.l[kk].dot(mu) + system.c[k];
    }
    return u;
}

Control assemble_control(const std::vector<Control>& basis_controls, const Eigen::VectorXd& lambda) {
    require_size(basis_controls.size(), static_cast<std::size_t>(2 * lambda.size()), "basis controls");
    Control h = basis_controls.front();
    h.values.setZero();
    for (Eigen::Index j = 0; j < lambda.size(); ++j) {
        h.values += lambda[j] * basis_controls[static_cast<std::size_t>(2 * j)].values;
        h.values += std::abs(lambda[j]) * basis_controls[static_cast<std::size_t>(2 * j + 1)].values;
    }
    return h;
}

Eigen::VectorXd direct_U(const TraceOperator& op, const SpaceTimeField& xi, const Control& h,
                         const DirectionBasis& basis) {
    const AugmentedTrace tr = op.observe(xi, h);
    Eigen::VectorXd u(basis.size());
    for (int k = 0; k < basis.size(); ++k) {
        u[k] = boundary_time_pairing(basis.w[static_cast<std::size_t>(k)], tr.y, tr.z, op.grid().boundary);
    }
    return u;
}

std::string_view to_string(LambdaMethod m) noexcept {
    switch (m) {
    case LambdaMethod::Trivial: return "trivial";
    case LambdaMethod::Bisection: return "bisection";
    case LambdaMethod::DampedFixedPoint: return "damped-fixed-point";
    case LambdaMethod::NewtonFallback: return "newton-fallback";
    }
    return "?";
}

double lambda_ball_radius(const QLCSystem& system) {
    double l = 0.0;
    for (const auto& v : system.l) {
        l = std::max(l, v.norm());
    }
    l *= std::sqrt(2.0);
    const double c = system.c.cwiseAbs().maxCoeff();
    const double M = system.M;
    return 2.0 * std::sqrt(M * M * l * l + M * c);
}

namespace {

bool within_tolerance(const QLCSystem& s, const Eigen::VectorXd& u, double tol) {
    for (int k = 0; k < s.M; ++k) {
        if (std::abs(u[k]) > tol * std::max(1.0, std::abs(s.c[k]))) {
            return false;
        }
    }
    return true;
}

/// Scaled residual max_k |U_k| / max(1, |c_k|).
double scaled_residual(const QLCSystem& s, const Eigen::VectorXd& u) {
    double r = 0.0;
    for (int k = 0; k < s.M; ++k) {
        r = std::max(r, std::abs(u[k]) / std::max(1.0, std::abs(s.c[k])));
    }
    return r;
}

Eigen::MatrixXd jacobian(const QLCSystem& s, const Eigen::VectorXd& lambda) {
    const Eigen::VectorXd mu = mu_of(lambda);
    Eigen::MatrixXd J(s.M, s.M);
    for (int k = 0; k < s.M; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        const Eigen::VectorXd g = s.P[kk] * mu + s.l[kk];
        for (int j = 0; j < s.M; ++j) {
            J(k, j) = g[2 * j] + sign0(lambda[j]) * g[2 * j + 1];
        }
    }
    return J;
}

Eigen::VectorXd project_ball(Eigen::VectorXd v, double R) {
    const double n = v.norm();
    if (R > 0.0 && n > R) {
        v *= R / n;
    }
    return v;
}

/// Damped Newton with backtracking on ‖U‖; returns the best point seen.
Eigen::VectorXd newton(const QLCSystem& s, Eigen::VectorXd lambda, double tol, int maxit, int& iterations) {
    Eigen::VectorXd u = evaluate_U(s, lambda);
    for (int it = 0; it < maxit && !within_tolerance(s, u, tol * 1e-3); ++it) {
        ++iterations;
        const Eigen::VectorXd step = jacobian(s, lambda).colPivHouseholderQr().solve(-u);
        if (!step.allFinite()) {
            break;
        }
        double t = 1.0;
        bool improved = false;
        for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
            const Eigen::VectorXd trial = lambda + t * step;
            const Eigen::VectorXd ut = evaluate_U(s, trial);
            if (ut.norm() < u.norm()) {
                lambda = trial;
                u = ut;
                improved = true;
                break;
            }
        }
        if (!improved) {
            break;
        }
    }
    return lambda;
}

} // namespace

LambdaSolveReport solve_lambda(const QLCSystem& system, const LambdaSolveOptions& options) {
    const int M = system.M;
    LambdaSolveReport rep;
    rep.lambda = Eigen::VectorXd::Zero(M);
    rep.radius = options.radius > 0.0 ? options.radius : lambda_ball_radius(system);
    rep.residual = evaluate_U(system, rep.lambda);
    if (within_tolerance(system, rep.residual, options.tol_U)) {
        rep.method = LambdaMethod::Trivial;
        rep.success = true;
        return rep;
    }

    if (M == 1) {
        rep.method = LambdaMethod::Bisection;
        const auto U = [&](double x) { return evaluate_U(system, Eigen::VectorXd::Constant(1, x))[0]; };
        // On each sign branch U is a quadratic in λ; its vertex and 0 are
        // probed besides the expanding bracket so that a dip below zero
        // between two roots of one branch is not missed.
        std::vector<double> probes{0.0};
        const Eigen::MatrixXd& P = system.P[0];
        for (const double sigma : {1.0, -1.0}) {
            const double a = 0.5 * (P(0, 0) + 2.0 * sigma * P(0, 1) + P(1, 1));
            const double b = system.l[0][0] + sigma * system.l[0][1];
            if (a != 0.0 && -b / (2.0 * a) * sigma > 0.0) {
                probes.push_back(-b / (2.0 * a));
            }
        }
        const auto bracket = [&](double& lo, double& hi, double& ulo, double& uhi) {
            std::vector<double> xs = probes;
            xs.push_back(lo);
            xs.push_back(hi);
            std::sort(xs.begin(), xs.end());
            double prev = U(xs.front());
            for (std::size_t i = 1; i < xs.size(); ++i) {
                const double cur = U(xs[i]);
                if (prev * cur <= 0.0) {
                    lo = xs[i - 1];
                    hi = xs[i];
                    ulo = prev;
                    uhi = cur;
                    return true;
                }
                prev = cur;
            }
            return false;
        };
        double lo = -1.0, hi = 1.0, ulo = 0.0, uhi = 0.0;
        bool found = bracket(lo, hi, ulo, uhi);
        for (int grow = 0; grow < 200 && !found; ++grow) {
            lo *= 2.0;
            hi *= 2.0;
            ++rep.iterations;
            double l2 = lo, h2 = hi;
            found = bracket(l2, h2, ulo, uhi);
            if (found) {
                lo = l2;
                hi = h2;
            }
        }
        if (!found) {
            throw Error(ErrorCode::NoSolutionFound, "no sign change of U on any bracket");
        }
        double x = std::abs(ulo) < std::abs(uhi) ? lo : hi;
        double ux = std::min(std::abs(ulo), std::abs(uhi));
        if (ulo == 0.0) {
            x = lo;
        } else if (uhi == 0.0) {
            x = hi;
        } else {
            for (int it = 0; it < 200; ++it) {
                ++rep.iterations;
                const double mid = 0.5 * (lo + hi);
                const double um = U(mid);
                if (std::abs(um) < ux) {
                    x = mid;
                    ux = std::abs(um);
                }
                if (um == 0.0 || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(mid)) {
                    break;
                }
                if (um * ulo < 0.0) {
                    hi = mid;
                } else {
                    lo = mid;
                    ulo = um;
                }
            }
        }
        rep.lambda[0] = x;
        rep.residual = evaluate_U(system, rep.lambda);
        rep.success = within_tolerance(system, rep.residual, options.tol_U);
        if (!rep.success) {
            throw Error(ErrorCode::NoSolutionFound, fmt("bisection stalled with |U| = %.3g", rep.residual.norm()));
        }
        return rep;
    }

    if (system.max_q_deviation() > 1.0 / (2.0 * M)) {
        rep.warning = "quadratic part deviates from the decoupled structure beyond 1/(2M); no convergence guarantee";
    }

    // Damped fixed point λ ← (1−θ)λ + θF(λ), F_k = s(λ_k|λ_k| − U_k(λ)).
    rep.method = LambdaMethod::DampedFixedPoint;
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(M);
    Eigen::VectorXd best = lambda;
    double best_res = scaled_residual(system, evaluate_U(system, lambda));
    int since_best = 0;
    for (int it = 0; it < options.max_iterations; ++it) {
        ++rep.iterations;
        const Eigen::VectorXd u = evaluate_U(system, lambda);
        Eigen::VectorXd F(M);
        for (int k = 0; k < M; ++k) {
            F[k] = signed_sqrt(lambda[k] * std::abs(lambda[k]) - u[k]);
        }
        lambda = project_ball((1.0 - options.theta) * lambda + options.theta * F, rep.radius);
        const Eigen::VectorXd un = evaluate_U(system, lambda);
        const double r = scaled_residual(system, un);
        if (r < best_res) {
            best_res = r;
            best = lambda;
            since_best = 0;
        } else if (++since_best > 50) {
            break;
        }
        if (within_tolerance(system, un, options.tol_U)) {
            break;
        }
    }
    // Polish (or rescue) with Newton from the best point.
    {
        Eigen::VectorXd polished = newton(system, best, options.tol_U, 100, rep.iterations);
        const double r = scaled_residual(system, evaluate_U(system, polished));
        if (r <= best_res) {
            if (best_res > options.tol_U) {
                rep.method = LambdaMethod::NewtonFallback;
            }
            best_res = r;
            best = polished;
        }
    }
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int restart = 0; restart < options.restarts && best_res > options.tol_U; ++restart) {
        Eigen::VectorXd start(M);
        for (int k = 0; k < M; ++k) {
            start[k] = unit(rng);
        }
        start = project_ball(start * rep.radius, rep.radius);
        Eigen::VectorXd cand = newton(system, start, options.tol_U, 100, rep.iterations);
        const double r = scaled_residual(system, evaluate_U(system, cand));
        if (r < best_res) {
            best_res = r;
            best = cand;
            rep.method = LambdaMethod::NewtonFallback;
        }
    }
    rep.lambda = best;
    rep.residual = evaluate_U(system, best);
    rep.success = within_tolerance(system, rep.residual, options.tol_U);
    if (!rep.success) {
        throw Error(ErrorCode::NoSolutionFound,
                    fmt("fixed point and Newton restarts failed; best scaled residual %.3g", best_res));
    }
    return rep;
}

ExactResult exact_insensitize(const TraceOperator& op, const SpaceTimeField& xi,
                              const std::vector<PerturbationField>& directions, const ExactOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    const Grid& g = op.grid();
    if (directions.empty()) {
        throw Error(ErrorCode::InvalidSpec, "no perturbation directions");
    }
    if (!(options.epsilon > 0.0)) {
        throw Error(ErrorCode::InvalidSpec, "epsilon must be positive");
    }
    if (options.terminal && g.spec.geometric_case != GeometricCase::Intersecting) {
        throw Error(ErrorCode::GeometryUnsupported, "terminal channel requires intersecting control and observation sets");
    }
    ExactResult res;
    const AugmentedTrace base = op.observe(xi, zero_control(g, op.time()));
    res.kernel_l1_before = kernel_l1_norm(sensitivity_kernel(base.y, base.z), g.boundary);
    const auto finish = [&] {
        res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return res;
    };

    try {
        res.basis = orthonormalize_normal_traces(directions, g.boundary);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::AllDirectionsTangent) {
            throw;
        }
        // Every derivative along the family vanishes identically: only the
        // approximate property remains to be met.
        res.all_tangent = true;
        ControlResult a = approx_insensitize(op, xi, options.epsilon, options.approx_schedule);
        res.h = res.h0 = a.h;
        res.h1 = zero_control(g, op.time());
        res.kernel_l1_after = a.kernel_l1_after;
        res.verified = a.kernel_l1_after <= options.epsilon;
        res.note = "all directions tangent";
        return finish();
    }
    const int M = res.basis.size();

    // Basis controls toward the γ targets (terminal state kept small in the
    // intersecting case when a terminal goal is requested).
    const GammaTargets targets = build_gamma_targets(res.basis, g.boundary, op.time());
    BasisControlOptions bopt;
    bopt.parallel = options.parallel;
    bopt.terminal_bound = options.terminal.has_value();
    const double q_target = 1.0 / (4.0 * M * M);
    bopt.accept = [&](const BasisControls& bc) {
        const TracePair zero{BoundaryTrace(op.time(), base.y.points()), BoundaryTrace(op.time(), base.z.points())};
        return assemble_QLC(res.basis, bc.traces, zero, g.boundary).max_q_deviation() <= q_target;
    };
    res.basis_controls = compute_basis_controls(op, targets, options.basis_schedule, bopt);

    const auto stage2 = [&](const Control& h0, QLCSystem& sys, LambdaSolveReport& lam) {
        const AugmentedTrace tr = op.observe(xi, h0);
        sys = assemble_QLC(res.basis, res.basis_controls.traces, TracePair{tr.y, tr.z}, g.boundary);
        lam = solve_lambda(sys, options.lambda);
        return assemble_control(res.basis_controls.h, lam.lambda);
    };

    const auto amplification = [&](const Control& h0, const Control& h1) {
        const AugmentedTrace src = op.observe(xi, h0);
        const double n = pair_norm(TracePair{src.y, src.z}, g);
        return n > 0.0 ? pair_norm(op.apply(h1), g) / n : 0.0;
    };

    // Calibration: amplification C of stage 2 applied to the raw source. When
    // U has no root there, C is measured on the stage-1 output instead.
    bool calibrated = true;
    try {
        QLCSystem sys;
        LambdaSolveReport lam;
        const Control zero = zero_control(g, op.time());
        res.amplification = amplification(zero, stage2(zero, sys, lam));
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NoSolutionFound) {
            throw;
        }
        calibrated = false;
        res.note += "no root for the raw source; amplification measured on the stage-1 output; ";
    }
    res.epsilon0 = std::sqrt(options.epsilon) / (res.amplification + 1.0);

    ControlResult s1;
    constexpr int max_rounds = 6;
    for (int round = 0; round < max_rounds; ++round) {
        // Stage 1: traces below ε₀.
        if (options.terminal) {
            TerminalGoal goal = *options.terminal;
            goal.trace_epsilon = res.epsilon0;
            s1 = insensitize_with_terminal(op, xi, goal, options.approx_schedule);
        } else {
            RegularizationSchedule sched = options.approx_schedule;
            sched.epsilon = res.epsilon0;
            s1 = approx_trace_control(op, xi, TraceTarget::zero(g, op.time()), sched);
        }
        res.h0 = s1.h;
        res.stage1_met = s1.criteria_met;
        res.stage1_trace_norm = std::hypot(s1.trace_norm_y, s1.trace_norm_z);

        // Stage 2 on ξ₁ = ξ + 1_ω h₀.
        if (calibrated) {
            res.h1 = stage2(res.h0, res.system, res.lambda);
            break;
        }
        try {
            res.h1 = stage2(res.h0, res.system, res.lambda);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoSolutionFound || round + 1 == max_rounds) {
                throw;
            }
            res.epsilon0 *= 0.1;
            continue;
        }
        res.amplification = amplification(res.h0, res.h1);
        const double needed = std::sqrt(options.epsilon) / (res.amplification + 1.0);
        if (res.epsilon0 <= needed) {
            break;
        }
        res.epsilon0 = needed;
    }
    res.h = res.h0 + res.h1;
    res.q_deviation = res.system.max_q_deviation();

    // Verification by an independent cascade.
    const AugmentedTrace fin = op.observe(xi, res.h);
    res.U_recomputed.resize(M);
    for (int k = 0; k < M; ++k) {
        res.U_recomputed[k] = boundary_time_pairing(res.basis.w[static_cast<std::size_t>(k)], fin.y, fin.z, g.boundary);
    }
    res.kernel_l1_after = kernel_l1_norm(sensitivity_kernel(fin.y, fin.z), g.boundary);
    bool ok = within_tolerance(res.system, res.U_recomputed, options.lambda.tol_U);
    std::string why;
    if (!ok) {
        why += fmt("recomputed |U| = %.3g exceeds tolerance; ", res.U_recomputed.cwiseAbs().maxCoeff());
    }
    if (res.kernel_l1_after > options.epsilon) {
        ok = false;
        why += fmt("kernel L1 %.3g > epsilon %.3g; ", res.kernel_l1_after, options.epsilon);
    }
    if (options.terminal) {
        const auto& goal = *options.terminal;
        if (goal.mode == TerminalMode::Approximate && goal.y_T) {
            TerminalState d = fin.terminal;
            d.values -= goal.y_T->values;
            res.terminal_residual = norm(d, g);
            if (res.terminal_residual > goal.terminal_epsilon) {
                ok = false;
                why += fmt("terminal residual %.3g > %.3g; ", res.terminal_residual, goal.terminal_epsilon);
            }
        } else {
            res.terminal_residual = norm(fin.terminal, g);
            const double limit = goal.null_reduction * norm(base.terminal, g);
            if (res.terminal_residual > limit) {
                ok = false;
                why += fmt("terminal norm %.3g > %.3g; ", res.terminal_residual, limit);
            }
        }
    }
    res.verified = ok;
    res.note.insert(0, why);
    if (!s1.note.empty()) {
        res.note += "stage 1: " + s1.note + "; ";
    }
    if (res.basis_controls.target_unreachable) {
        res.note += "basis controls: " + res.basis_controls.note + "; ";
    }
    if (!res.lambda.warning.empty()) {
        res.note += res.lambda.warning;
    }
    if (!ok && options.strict) {
        throw Error(ErrorCode::VerificationFailed, why);
    }
    return finish();
}

} // namespace insens
