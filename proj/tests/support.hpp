#pragma once

#include "insens/domain.hpp"
#include "insens/pde.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <random>

namespace testsupport {

using namespace insens;

inline DomainSpec unit_square(int n, RegionShape omega, RegionShape theta, GeometricCase c) {
    DomainSpec s;
    s.nx = s.ny = n;
    s.omega = omega;
    s.theta = theta;
    s.geometric_case = c;
    return s;
}

/// Left strip control, observation block on the right.
inline DomainSpec disjoint_square(int n) {
    return unit_square(n, AxisRect{0.05, 0.45, 0.1, 0.9}, AxisRect{0.6, 0.9, 0.3, 0.7}, GeometricCase::Disjoint);
}

inline DomainSpec intersecting_square(int n) {
    return unit_square(n, AxisRect{0.1, 0.6, 0.1, 0.9}, AxisRect{0.4, 0.9, 0.2, 0.8}, GeometricCase::Intersecting);
}

/// Discrete Dirichlet eigenvalue of −Δ_h for mode (p, q).
inline double discrete_eigenvalue(const Grid& g, int p, int q) {
    const double pi = std::numbers::pi;
    const double sx = std::sin(p * pi * g.hx / (2.0 * g.spec.lx));
    const double sy = std::sin(q * pi * g.hy / (2.0 * g.spec.ly));
    return 4.0 * sx * sx / (g.hx * g.hx) + 4.0 * sy * sy / (g.hy * g.hy);
}

inline Eigen::VectorXd sine_mode(const Grid& g, int p, int q) {
    const double pi = std::numbers::pi;
    Eigen::VectorXd v(g.num_nodes());
    const double c = 2.0 / std::sqrt(g.spec.lx * g.spec.ly);
    for (int k = 0; k < g.num_nodes(); ++k) {
        v[k] = c * std::sin(p * pi * g.x[k] / g.spec.lx) * std::sin(q * pi * g.y[k] / g.spec.ly);
    }
    return v;
}

template <class F>
F random_like(const F& shape, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    F out = shape;
    for (Eigen::Index i = 0; i < out.values.size(); ++i) {
        out.values.data()[i] = d(rng);
    }
    return out;
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

inline std::shared_ptr<const HeatPropagator> propagator(const Grid& g, TimeAxis t) {
    return std::make_shared<const HeatPropagator>(g, t);
}

} // namespace testsupport

namespace testsupport {

inline SpaceTimeField gaussian_source(const Grid& g, const TimeAxis& t, double cx, double cy, double s,
                                      double amplitude = 1.0) {
    SpaceTimeField xi = zero_field(g, t);
    for (int k = 0; k < g.num_nodes(); ++k) {
        const double r2 = (g.x[k] - cx) * (g.x[k] - cx) + (g.y[k] - cy) * (g.y[k] - cy);
        xi.values.row(k).setConstant(amplitude * std::exp(-r2 / (2.0 * s * s)));
    }
    return xi;
}

} // namespace testsupport
