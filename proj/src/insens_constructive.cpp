#include "insens/insens_constructive.hpp"

#include "insens/shape.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace insens {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

/// 0 below a0, ramps up to 1 on [a0, a1], 1 on [a1, b1], ramps down to 0 on [b1, b0].
/// Infinite a0 (or b0) removes the rising (or falling) ramp.
struct Plateau {
    double a0 = -inf, a1 = -inf, b1 = inf, b0 = inf;

    [[nodiscard]] RampValue operator()(double s) const {
        RampValue out{1.0, 0.0, 0.0};
        if (std::isfinite(a0)) {
            const double w = a1 - a0;
            const RampValue up = quintic_ramp((s - a0) / w);
            out = {up.value, up.d1 / w, up.d2 / (w * w)};
        }
        if (std::isfinite(b0)) {
            const double w = b0 - b1;
            const RampValue dn = quintic_ramp((s - b1) / w);
            const double v = 1.0 - dn.value, d1 = -dn.d1 / w, d2 = -dn.d2 / (w * w);
            out = {out.value * v, out.d1 * v + out.value * d1, out.d2 * v + 2.0 * out.d1 * d1 + out.value * d2};
        }
        return out;
    }
};

CutoffFunction blank(const Grid& g) {
    CutoffFunction c;
    c.nx = g.nx();
    c.ny = g.ny();
    c.hx = g.hx;
    c.hy = g.hy;
    const int n = g.num_nodes();
    c.values = Eigen::VectorXd::Ones(n);
    c.grad_x = Eigen::VectorXd::Zero(n);
    c.grad_y = Eigen::VectorXd::Zero(n);
    c.laplacian = Eigen::VectorXd::Zero(n);
    return c;
}

/// η = 1 − φx(x)·φy(y).
CutoffFunction rect_cutoff(const Grid& g, const Plateau& px, const Plateau& py) {
    CutoffFunction c = blank(g);
    for (int k = 0; k < g.num_nodes(); ++k) {
        const RampValue fx = px(g.x[k]);
        const RampValue fy = py(g.y[k]);
        c.values[k] = 1.0 - fx.value * fy.value;
        c.grad_x[k] = -fx.d1 * fy.value;
        c.grad_y[k] = -fx.value * fy.d1;
        c.laplacian[k] = -(fx.d2 * fy.value + fx.value * fy.d2);
    }
    return c;
}

/// η = φ(r) or 1 − φ(r) around (cx, cy).
CutoffFunction radial_cutoff(const Grid& g, double cx, double cy, const Plateau& p, bool complement) {
    CutoffFunction c = blank(g);
    const double sign = complement ? -1.0 : 1.0;
    for (int k = 0; k < g.num_nodes(); ++k) {
        const double dx = g.x[k] - cx, dy = g.y[k] - cy;
        const double r = std::hypot(dx, dy);
        const RampValue f = p(r);
        c.values[k] = complement ? 1.0 - f.value : f.value;
        if (r > 0.0) {
            c.grad_x[k] = sign * f.d1 * dx / r;
            c.grad_y[k] = sign * f.d1 * dy / r;
            c.laplacian[k] = sign * (f.d2 + f.d1 / r);
        } else {
            c.laplacian[k] = sign * 2.0 * f.d2;
        }
    }
    return c;
}

void require_gap(double gap, double h, const char* where) {
    if (gap < 3.0 * h * (1.0 - 1e-9)) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "%s: %.3g cells between the zero set and the one set, need 3", where, gap / h);
        throw Error(ErrorCode::BandTooThin, buf);
    }
}

void require_binary_masks(const Grid& g) {
    for (int k = 0; k < g.num_nodes(); ++k) {
        const double w = g.omega_mask[k], t = g.theta_mask[k];
        if ((w != 0.0 && w != 1.0) || (t != 0.0 && t != 1.0)) {
            throw Error(ErrorCode::GeometryUnsupported, "explicit constructions need node-indicator masks");
        }
    }
}

SpaceTimeField scaled(const SpaceTimeField& f, const Eigen::VectorXd& s) {
    SpaceTimeField out = f;
    out.values = f.values.array().colwise() * s.array();
    return out;
}

SpaceTimeField commutator(CommutatorKind kind, const CutoffFunction& eta, const SpaceTimeField& f) {
    return kind == CommutatorKind::Discrete ? discrete_commutator(eta, f) : commutator_apply(eta, f);
}

double sup_where(const SpaceTimeField& f, const Eigen::VectorXd& mask, double value) {
    double m = 0.0;
    for (Eigen::Index k = 0; k < f.points(); ++k) {
        if (mask[k] == value) {
            m = std::max(m, f.values.row(k).cwiseAbs().maxCoeff());
        }
    }
    return m;
}

std::string fmt(const char* f, double a, double b) {
    char buf[200];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

/// Re-solves the cascade for the full-field control H and fills the report.
ConstructionReport verify(const HeatPropagator& heat, const SpaceTimeField& xi, const SpaceTimeField& H,
                          const SpaceTimeField& expected, const SpaceTimeField& y_xi) {
    const Grid& g = heat.grid();
    ConstructionReport rep;
    rep.support_violation = sup_where(H, g.omega_mask, 0.0);
    rep.support_ok = rep.support_violation == 0.0;
    rep.h = zero_control(g, heat.time());
    for (std::size_t q = 0; q < g.omega_nodes.size(); ++q) {
        rep.h.values.row(static_cast<Eigen::Index>(q)) = H.values.row(g.omega_nodes[q]);
    }
    const CascadeSolution sol = solve_cascade(heat, xi, rep.h);
    rep.y0 = sol.y;
    rep.z0 = sol.z;
    rep.y0_expected = expected;
    const double ny = norm(y_xi, g);
    rep.y0_defect = ny > 0.0 ? norm(sol.y - expected, g) / ny : norm(sol.y - expected, g);
    double top = 0.0;
    for (int n = 0; n < expected.time.levels(); ++n) {
        top = std::max(top, level_norm(expected, n, g));
    }
    rep.initial_defect = top > 0.0 ? level_norm(expected, 0, g) / top : 0.0;
    rep.z0_sup = sol.z.values.cwiseAbs().maxCoeff();
    rep.z0_outside = sup_where(sol.z, g.theta_mask, 0.0);
    rep.z0_theta = sup_where(sol.z, g.theta_mask, 1.0);
    rep.kernel_l1 = kernel_l1_norm(
        sensitivity_kernel(neumann_trace(sol.y, g), neumann_trace(sol.z, g)), g.boundary);
    const CascadeSolution free = solve_cascade(heat, xi, zero_control(g, heat.time()));
    rep.kernel_l1_uncontrolled = kernel_l1_norm(
        sensitivity_kernel(neumann_trace(free.y, g), neumann_trace(free.z, g)), g.boundary);
    return rep;
}

void finish(ConstructionReport& rep, const ConstructiveOptions& options, bool ok, const std::string& why) {
    if (!rep.support_ok) {
        ok = false;
        rep.note += fmt("control is %.3g outside omega; ", rep.support_violation, 0.0);
    }
    rep.verified = ok;
    rep.note += why;
    if (!ok && options.strict) {
        throw Error(ErrorCode::VerificationFailed, rep.note);
    }
}

} // namespace

RampValue quintic_ramp(double s) {
    if (s <= 0.0) {
        return {0.0, 0.0, 0.0};
    }
    if (s >= 1.0) {
        return {1.0, 0.0, 0.0};
    }
    const double u = 1.0 - s;
    return {s * s * s * (10.0 - 15.0 * s + 6.0 * s * s), 30.0 * s * s * u * u, 60.0 * s * u * (1.0 - 2.0 * s)};
}

CutoffFunction CutoffFunction::constant(const Grid& grid, double c) {
    CutoffFunction out = blank(grid);
    out.values.setConstant(c);
    return out;
}

std::vector<int> CutoffFunction::band() const {
    std::vector<int> out;
    for (Eigen::Index k = 0; k < values.size(); ++k) {
        if ((values[k] > 0.0 && values[k] < 1.0) || grad_x[k] != 0.0 || grad_y[k] != 0.0 || laplacian[k] != 0.0) {
            out.push_back(static_cast<int>(k));
        }
    }
    return out;
}

CutoffFunction operator*(const CutoffFunction& a, const CutoffFunction& b) {
    if (a.nx != b.nx || a.ny != b.ny) {
        throw Error(ErrorCode::DimensionMismatch, "cutoffs on different grids");
    }
    CutoffFunction c = a;
    c.values = a.values.cwiseProduct(b.values);
    c.grad_x = a.values.cwiseProduct(b.grad_x) + b.values.cwiseProduct(a.grad_x);
    c.grad_y = a.values.cwiseProduct(b.grad_y) + b.values.cwiseProduct(a.grad_y);
    c.laplacian = a.values.cwiseProduct(b.laplacian) + b.values.cwiseProduct(a.laplacian) +
                  2.0 * (a.grad_x.cwiseProduct(b.grad_x) + a.grad_y.cwiseProduct(b.grad_y));
    return c;
}

CutoffFunction build_cutoff(const Grid& grid, const std::optional<RegionShape>& zero_region,
                            const RegionShape& one_region_complement) {
    if (!zero_region) {
        return CutoffFunction::constant(grid, 1.0);
    }
    const double hm = std::max(grid.hx, grid.hy);
    const auto& z = zero_region->variant();
    const auto& c = one_region_complement.variant();
    const auto outside = [] {
        throw Error(ErrorCode::GeometryUnsupported, "zero region must lie inside the one-set complement");
    };

    if (const auto* zr = std::get_if<AxisRect>(&z)) {
        const auto* cr = std::get_if<AxisRect>(&c);
        if (!cr) {
            throw Error(ErrorCode::GeometryUnsupported, "a rectangular zero set needs a rectangular complement");
        }
        if (!(zr->x0 > cr->x0 && zr->x1 < cr->x1 && zr->y0 > cr->y0 && zr->y1 < cr->y1)) {
            outside();
        }
        require_gap(zr->x0 - cr->x0, grid.hx, "left band");
        require_gap(cr->x1 - zr->x1, grid.hx, "right band");
        require_gap(zr->y0 - cr->y0, grid.hy, "bottom band");
        require_gap(cr->y1 - zr->y1, grid.hy, "top band");
        return rect_cutoff(grid, Plateau{cr->x0 + grid.hx, zr->x0, zr->x1, cr->x1 - grid.hx},
                           Plateau{cr->y0 + grid.hy, zr->y0, zr->y1, cr->y1 - grid.hy});
    }
    if (const auto* zd = std::get_if<Disk>(&z)) {
        double reach = 0.0; // largest radius around the disk centre inside the complement
        if (const auto* cd = std::get_if<Disk>(&c)) {
            reach = cd->r - std::hypot(cd->cx - zd->cx, cd->cy - zd->cy);
        } else if (const auto* cr = std::get_if<AxisRect>(&c)) {
            reach = std::min({zd->cx - cr->x0, cr->x1 - zd->cx, zd->cy - cr->y0, cr->y1 - zd->cy});
        } else {
            throw Error(ErrorCode::GeometryUnsupported, "a disk zero set needs a disk or rectangular complement");
        }
        if (!(reach > zd->r)) {
            outside();
        }
        require_gap(reach - zd->r, hm, "radial band");
        return radial_cutoff(grid, zd->cx, zd->cy, Plateau{-inf, -inf, zd->r, reach - hm}, true);
    }
    const auto& za = std::get<Annulus>(z);
    const auto* ca = std::get_if<Annulus>(&c);
    if (!ca || std::hypot(ca->cx - za.cx, ca->cy - za.cy) > 1e-12) {
        throw Error(ErrorCode::GeometryUnsupported, "an annular zero set needs a concentric annular complement");
    }
    if (!(za.r_in > ca->r_in && za.r_out < ca->r_out)) {
        outside();
    }
    require_gap(za.r_in - ca->r_in, hm, "inner radial band");
    require_gap(ca->r_out - za.r_out, hm, "outer radial band");
    return radial_cutoff(grid, za.cx, za.cy, Plateau{ca->r_in + hm, za.r_in, za.r_out, ca->r_out - hm}, true);
}

CutoffFunction build_radial_cutoff(const Grid& grid, double cx, double cy, double r_one, double r_zero) {
    if (!(r_zero > r_one && r_one >= 0.0)) {
        throw Error(ErrorCode::InvalidSpec, "radial cutoff needs 0 <= r_one < r_zero");
    }
    return radial_cutoff(grid, cx, cy, Plateau{-inf, -inf, r_one, r_zero}, false);
}

SpaceTimeField commutator_apply(const CutoffFunction& eta, const SpaceTimeField& f) {
    require_size(static_cast<std::size_t>(f.points()), static_cast<std::size_t>(eta.values.size()), "field nodes");
    SpaceTimeField out(f.time, f.points());
    const int nx = eta.nx, ny = eta.ny;
    const auto at = [&](int i, int j, int n) {
        return (i < 1 || j < 1 || i > nx || j > ny) ? 0.0 : f.values((j - 1) * nx + (i - 1), n);
    };
    for (int n = 0; n < f.time.levels(); ++n) {
        for (int j = 1; j <= ny; ++j) {
            for (int i = 1; i <= nx; ++i) {
                const int k = (j - 1) * nx + (i - 1);
                if (eta.grad_x[k] == 0.0 && eta.grad_y[k] == 0.0 && eta.laplacian[k] == 0.0) {
                    continue;
                }
                const double fx = (at(i + 1, j, n) - at(i - 1, j, n)) / (2.0 * eta.hx);
                const double fy = (at(i, j + 1, n) - at(i, j - 1, n)) / (2.0 * eta.hy);
                out.values(k, n) =
                    2.0 * (eta.grad_x[k] * fx + eta.grad_y[k] * fy) + f.values(k, n) * eta.laplacian[k];
            }
        }
    }
    return out;
}

SpaceTimeField discrete_commutator(const CutoffFunction& eta, const SpaceTimeField& f) {
    require_size(static_cast<std::size_t>(f.points()), static_cast<std::size_t>(eta.values.size()), "field nodes");
    SpaceTimeField out(f.time, f.points());
    const int nx = eta.nx, ny = eta.ny;
    const double cx = 1.0 / (eta.hx * eta.hx), cy = 1.0 / (eta.hy * eta.hy);
    for (int j = 1; j <= ny; ++j) {
        for (int i = 1; i <= nx; ++i) {
            const int k = (j - 1) * nx + (i - 1);
            const double e = eta.values[k];
            const auto add = [&](int ii, int jj, double c) {
                if (ii < 1 || jj < 1 || ii > nx || jj > ny) {
                    return; // Dirichlet neighbour: f = 0
                }
                const int m = (jj - 1) * nx + (ii - 1);
                const double d = eta.values[m] - e;
                if (d != 0.0) {
                    out.values.row(k) += (c * d) * f.values.row(m);
                }
            };
            add(i - 1, j, cx);
            add(i + 1, j, cx);
            add(i, j - 1, cy);
            add(i, j + 1, cy);
        }
    }
    return out;
}

std::string_view to_string(CommutatorKind kind) noexcept {
    return kind == CommutatorKind::Discrete ? "discrete" : "analytic";
}

std::string_view to_string(TimeDerivativeRule rule) noexcept {
    return rule == TimeDerivativeRule::Centered ? "centered" : "scheme-consistent";
}

NestedBands nested_bands(const Grid& grid) {
    const auto* theta = std::get_if<Disk>(&grid.spec.theta.variant());
    const auto* omega = std::get_if<Annulus>(&grid.spec.omega.variant());
    if (!theta || !omega) {
        throw Error(ErrorCode::GeometryUnsupported, "boundary construction needs a disk theta and an annular omega");
    }
    if (std::hypot(theta->cx - omega->cx, theta->cy - omega->cy) > 1e-12) {
        throw Error(ErrorCode::GeometryUnsupported, "theta and omega must be concentric");
    }
    if (!(omega->r_in < theta->r && theta->r < omega->r_out)) {
        throw Error(ErrorCode::GeometryUnsupported, "omega must contain the boundary of theta");
    }
    const double hm = std::max(grid.hx, grid.hy);
    const double a = theta->r - omega->r_in, b = omega->r_out - theta->r;
    if ((a + b) < 12.0 * hm * (1.0 - 1e-9) || a < 6.0 * hm * (1.0 - 1e-9) || b < 6.0 * hm * (1.0 - 1e-9)) {
        throw Error(ErrorCode::BandTooThin,
                    fmt("control annulus spans %.3g and %.3g cells on the two sides of the theta boundary; need 6 each",
                        a / hm, b / hm));
    }
    NestedBands nb;
    nb.cx = theta->cx;
    nb.cy = theta->cy;
    nb.radius = theta->r;
    const double margin = hm, half0 = 1.25 * hm;
    const double di = (a - margin - half0) / 3.0, dout = (b - margin - half0) / 3.0;
    for (int l = 0; l < 4; ++l) {
        nb.inner[static_cast<std::size_t>(l)] = theta->r - half0 - l * di;
        nb.outer[static_cast<std::size_t>(l)] = theta->r + half0 + l * dout;
    }
    return nb;
}

ConstructionReport construct_theta_in_omega(const HeatPropagator& heat, const SpaceTimeField& xi,
                                            const ConstructiveOptions& options) {
    const Grid& g = heat.grid();
    require_binary_masks(g);
    require_size(static_cast<std::size_t>(xi.points()), static_cast<std::size_t>(g.num_nodes()), "source nodes");
    const CutoffFunction eta = build_cutoff(g, g.spec.theta, g.spec.omega);

    const SpaceTimeField y_xi = heat.forward(xi);
    SpaceTimeField H = scaled(xi, eta.values - Eigen::VectorXd::Ones(g.num_nodes()));
    H -= commutator(options.commutator, eta, y_xi);

    ConstructionReport rep = verify(heat, xi, H, scaled(y_xi, eta.values), y_xi);
    const double y_scale = rep.y0.values.cwiseAbs().maxCoeff();
    const bool exact = options.commutator == CommutatorKind::Discrete;
    const double tol = exact ? options.tol_exact : options.tol_c;
    const double z_tol = (exact ? options.tol_z0 : options.tol_c) * y_scale;
    bool ok = true;
    std::string why;
    if (rep.z0_sup > z_tol) {
        ok = false;
        why += fmt("sup|z0| = %.3g exceeds %.3g; ", rep.z0_sup, z_tol);
    }
    if (rep.kernel_l1 > tol * rep.kernel_l1_uncontrolled) {
        ok = false;
        why += fmt("kernel L1 %.3g exceeds %.3g; ", rep.kernel_l1, tol * rep.kernel_l1_uncontrolled);
    }
    finish(rep, options, ok, why);
    return rep;
}

ConstructionReport construct_boundary_theta(const HeatPropagator& heat, const SpaceTimeField& xi,
                                            const ConstructiveOptions& options) {
    const Grid& g = heat.grid();
    require_binary_masks(g);
    require_size(static_cast<std::size_t>(xi.points()), static_cast<std::size_t>(g.num_nodes()), "source nodes");
    const NestedBands nb = nested_bands(g);
    const auto annulus_cutoff = [&](int l) {
        const auto lo = static_cast<std::size_t>(l);
        return radial_cutoff(g, nb.cx, nb.cy,
                             Plateau{nb.inner[lo + 1], nb.inner[lo], nb.outer[lo], nb.outer[lo + 1]}, true);
    };
    const CutoffFunction eta01 = annulus_cutoff(0);
    const CutoffFunction eta12 = annulus_cutoff(1);
    const CutoffFunction eta23 = annulus_cutoff(2);
    // 𝟙_Θη₀₁ as one smooth cutoff: 1 on Θ∖ω₁, 0 on ω₀ ∪ (Ω₀∖Θ).
    const CutoffFunction chi = build_radial_cutoff(g, nb.cx, nb.cy, nb.inner[1], nb.inner[0]);
    const CutoffFunction eta012 = eta01 * eta12;

    const SpaceTimeField y_xi = heat.forward(scaled(xi, eta23.values));
    const SpaceTimeField z_xi = heat.backward(scaled(y_xi, g.theta_mask.cwiseProduct(eta12.values)));
    const SpaceTimeField W = commutator(options.commutator, chi, z_xi);

    // (∂ₜ − Δ)W.
    const TimeAxis& t = heat.time();
    SpaceTimeField PW(t, W.points());
    const int N = t.steps;
    const double dt = t.dt();
    const Eigen::SparseMatrix<double>& A = heat.laplacian();
    PW.level(0) = (W.level(1) - W.level(0)) / dt - A * W.level(0);
    if (options.time_rule == TimeDerivativeRule::Centered) {
        for (int n = 1; n < N; ++n) {
            PW.level(n) = (W.level(n + 1) - W.level(n - 1)) / (2.0 * dt) - A * W.level(n);
        }
        PW.level(N) = (W.level(N) - W.level(N - 1)) / dt - A * W.level(N);
    } else {
        for (int n = 0; n < N; ++n) {
            const Eigen::VectorXd residual =
                (W.level(n + 1) - W.level(n)) / dt - 0.5 * (A * (W.level(n + 1) + W.level(n)));
            PW.level(n + 1) = 2.0 * residual - PW.level(n);
        }
    }

    SpaceTimeField H = scaled(xi, eta012.values.cwiseProduct(eta23.values) - Eigen::VectorXd::Ones(g.num_nodes()));
    H -= commutator(options.commutator, eta012, y_xi);
    H -= PW;

    ConstructionReport rep = verify(heat, xi, H, scaled(y_xi, eta012.values) - W, y_xi);
    bool ok = true;
    std::string why;
    if (rep.initial_defect > options.tol_c) {
        why += fmt("target state starts at %.3g of its peak level norm instead of 0; ", rep.initial_defect, 0.0);
    }
    if (rep.z0_outside > options.tol_c * rep.z0_sup) {
        ok = false;
        why += fmt("sup of z0 outside theta is %.3g of sup|z0|, above %.3g; ",
                   rep.z0_sup > 0.0 ? rep.z0_outside / rep.z0_sup : 0.0, options.tol_c);
    }
    if (rep.kernel_l1 > options.tol_c * rep.kernel_l1_uncontrolled) {
        ok = false;
        why += fmt("kernel L1 %.3g exceeds %.3g; ", rep.kernel_l1, options.tol_c * rep.kernel_l1_uncontrolled);
    }
    finish(rep, options, ok, why);
    return rep;
}

} // namespace insens
