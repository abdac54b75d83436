#include "insens/shape.hpp"

#include <cmath>
#include <variant>

namespace insens {

double evaluate_J(const Grid& grid, const SpaceTimeField& y) {
    require_size(static_cast<std::size_t>(y.points()), static_cast<std::size_t>(grid.num_nodes()), "field nodes");
    double total = 0.0;
    for (int n = 0; n < y.time.levels(); ++n) {
        double level = 0.0;
        for (Eigen::Index k = 0; k < y.points(); ++k) {
            const double v = y.values(k, n);
            level += grid.theta_mask[k] * v * v;
        }
        total += y.time.weight(n) * level;
    }
    return 0.5 * grid.cell_area() * total;
}

SensitivityKernel sensitivity_kernel(const BoundaryTrace& y_trace, const BoundaryTrace& z_trace) {
    y_trace.check_compatible(z_trace);
    const Eigen::MatrixXd prod = y_trace.values.cwiseProduct(z_trace.values);
    return {prod * y_trace.time.weights()};
}

double directional_derivative(const SensitivityKernel& kernel, const PerturbationField& v, const BoundaryGeometry& b) {
    require_size(static_cast<std::size_t>(kernel.values.size()), b.size(), "kernel");
    const Eigen::VectorXd vn = normal_component(v, b);
    double s = 0.0;
    for (std::size_t p = 0; p < b.size(); ++p) {
        const auto i = static_cast<Eigen::Index>(p);
        s += b.points[p].weight * vn[i] * kernel.values[i];
    }
    return s;
}

double kernel_l1_norm(const SensitivityKernel& kernel, const BoundaryGeometry& b) {
    require_size(static_cast<std::size_t>(kernel.values.size()), b.size(), "kernel");
    double s = 0.0;
    for (std::size_t p = 0; p < b.size(); ++p) {
        s += b.points[p].weight * std::abs(kernel.values[static_cast<Eigen::Index>(p)]);
    }
    return s;
}

SensitivityKernel cascade_kernel(const TraceOperator& ops, const SpaceTimeField& xi, const Control& h) {
    const AugmentedTrace tr = ops.observe(xi, h);
    return sensitivity_kernel(tr.y, tr.z);
}

SpaceTimeField sample(const SpaceTimeFunction& f, const Grid& grid, const TimeAxis& time, double ox, double oy) {
    SpaceTimeField out(time, grid.num_nodes());
    for (int n = 0; n < time.levels(); ++n) {
        const double t = time.time(n);
        for (int k = 0; k < grid.num_nodes(); ++k) {
            out.values(k, n) = f(t, grid.x[k] + ox, grid.y[k] + oy);
        }
    }
    return out;
}

SpaceTimeFunction bilinear(const SpaceTimeField& field, const Grid& grid) {
    return [field, nx = grid.nx(), ny = grid.ny(), hx = grid.hx, hy = grid.hy](double t, double x, double y) {
        const int level = static_cast<int>(std::lround(t / field.time.dt()));
        if (level < 0 || level > field.time.steps) {
            return 0.0;
        }
        const double gx = x / hx, gy = y / hy;
        if (gx <= 0.0 || gy <= 0.0 || gx >= nx + 1 || gy >= ny + 1) {
            return 0.0;
        }
        const int i0 = static_cast<int>(std::floor(gx));
        const int j0 = static_cast<int>(std::floor(gy));
        const double fx = gx - i0, fy = gy - j0;
        const auto at = [&](int i, int j) {
            if (i < 1 || j < 1 || i > nx || j > ny) {
                return 0.0;
            }
            return field.values((j - 1) * nx + (i - 1), level);
        };
        return (1 - fx) * (1 - fy) * at(i0, j0) + fx * (1 - fy) * at(i0 + 1, j0) + (1 - fx) * fy * at(i0, j0 + 1) +
               fx * fy * at(i0 + 1, j0 + 1);
    };
}

namespace {

RegionShape translated(const RegionShape& r, double dx, double dy) {
    return std::visit(
        [&](auto s) -> RegionShape {
            using S = decltype(s);
            if constexpr (std::is_same_v<S, AxisRect>) {
                return AxisRect{s.x0 + dx, s.x1 + dx, s.y0 + dy, s.y1 + dy};
            } else if constexpr (std::is_same_v<S, Disk>) {
                return Disk{s.cx + dx, s.cy + dy, s.r};
            } else {
                return Annulus{s.cx + dx, s.cy + dy, s.r_in, s.r_out};
            }
        },
        r.variant());
}

double perturbed_J(const DomainSpec& spec, const TimeAxis& time, const SpaceTimeFunction& xi,
                   const SpaceTimeFunction& h, Face face, double tau) {
    // Ω_τ = (Id + τV)(Ω₀): the chosen face moves outward by τ.
    DomainSpec s = spec;
    double ox = 0.0, oy = 0.0; // absolute position of the local origin
    switch (face) {
    case Face::Right: s.lx += tau; break;
    case Face::Top: s.ly += tau; break;
    case Face::Left: s.lx += tau; ox = -tau; break;
    case Face::Bottom: s.ly += tau; oy = -tau; break;
    }
    s.omega = translated(spec.omega, -ox, -oy);
    s.theta = translated(spec.theta, -ox, -oy);
    Grid g;
    try {
        g = build_grid(s, MaskRule::CellOverlap);
    } catch (const Error& e) {
        throw Error(ErrorCode::PerturbationTooLarge,
                    "perturbed rectangle at tau=" + std::to_string(tau) + " is invalid: " + e.what());
    }
    const HeatPropagator heat(g, time);
    const SpaceTimeField source = sample(xi, g, time, ox, oy);
    const SpaceTimeField hfield = sample(h, g, time, ox, oy);
    Control control = zero_control(g, time);
    for (std::size_t q = 0; q < g.omega_nodes.size(); ++q) {
        control.values.row(static_cast<Eigen::Index>(q)) = hfield.values.row(g.omega_nodes[q]);
    }
    const SpaceTimeField y = solve_forward(heat, source, control);
    return evaluate_J(g, y);
}

} // namespace

FiniteDifferenceResult finite_difference_dJ(const DomainSpec& spec, const TimeAxis& time, const SpaceTimeFunction& xi,
                                            const SpaceTimeFunction& h, Face face, const std::vector<double>& taus) {
    FiniteDifferenceResult out;
    for (const double tau : taus) {
        FiniteDifferenceSample s;
        s.tau = tau;
        s.j_plus = perturbed_J(spec, time, xi, h, face, tau);
        s.j_minus = perturbed_J(spec, time, xi, h, face, -tau);
        s.fd_value = (s.j_plus - s.j_minus) / (2.0 * tau);
        out.samples.push_back(s);
    }
    if (out.samples.size() >= 2) {
        const auto& coarse = out.samples[0];
        const auto& fine = out.samples[1];
        const double ratio = coarse.tau / fine.tau;
        const double r2 = ratio * ratio;
        out.extrapolated = (r2 * fine.fd_value - coarse.fd_value) / (r2 - 1.0);
    } else if (!out.samples.empty()) {
        out.extrapolated = out.samples[0].fd_value;
    }
    return out;
}

} // namespace insens
