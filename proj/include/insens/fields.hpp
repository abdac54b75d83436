#pragma once

#include "insens/error.hpp"

#include <Eigen/Core>

namespace insens {

/// Uniform time levels t_n = n·dt, n = 0..nt, with dt = T/nt.
struct TimeAxis {
    double horizon = 1.0;
    int steps = 64;

    [[nodiscard]] double dt() const noexcept { return horizon / steps; }
    [[nodiscard]] int levels() const noexcept { return steps + 1; }
    [[nodiscard]] double time(int n) const noexcept { return n * dt(); }
    /// Trapezoidal quadrature weight of level n.
    [[nodiscard]] double weight(int n) const noexcept {
        return (n == 0 || n == steps) ? 0.5 * dt() : dt();
    }
    [[nodiscard]] Eigen::VectorXd weights() const;

    friend bool operator==(const TimeAxis&, const TimeAxis&) = default;
};

/// Samples on (spatial index × time level); column n holds time level n.
/// The tag distinguishes grid-node fields, boundary traces and controls.
template <class Tag>
struct Sampled {
    TimeAxis time;
    Eigen::MatrixXd values;

    Sampled() = default;
    Sampled(TimeAxis t, Eigen::Index points) : time(t), values(Eigen::MatrixXd::Zero(points, t.levels())) {}
    Sampled(TimeAxis t, Eigen::MatrixXd v) : time(t), values(std::move(v)) {
        require_size(static_cast<std::size_t>(values.cols()), static_cast<std::size_t>(t.levels()), "time levels");
    }

    [[nodiscard]] Eigen::Index points() const noexcept { return values.rows(); }
    [[nodiscard]] auto level(int n) { return values.col(n); }
    [[nodiscard]] auto level(int n) const { return values.col(n); }

    Sampled& operator+=(const Sampled& o) {
        check_compatible(o);
        values += o.values;
        return *this;
    }
    Sampled& operator-=(const Sampled& o) {
        check_compatible(o);
        values -= o.values;
        return *this;
    }
    Sampled& operator*=(double s) {
        values *= s;
        return *this;
    }
    friend Sampled operator+(Sampled a, const Sampled& b) { return a += b; }
    friend Sampled operator-(Sampled a, const Sampled& b) { return a -= b; }
    friend Sampled operator*(double s, Sampled a) { return a *= s; }

    void check_compatible(const Sampled& o) const {
        if (!(time == o.time) || values.rows() != o.values.rows()) {
            throw Error(ErrorCode::DimensionMismatch, "incompatible sampled fields");
        }
    }
};

struct NodeTag;
struct TraceTag;
struct ControlTag;

/// Field on interior grid nodes (y, z, ξ, ...).
using SpaceTimeField = Sampled<NodeTag>;
/// Normal-derivative samples on boundary points.
using BoundaryTrace = Sampled<TraceTag>;
/// Control values on the ω nodes (in Grid::omega_nodes order).
using Control = Sampled<ControlTag>;

/// Interior-node values at t = T.
struct TerminalState {
    Eigen::VectorXd values;
};

/// The pair (∂ₙy, ∂ₙz).
struct TracePair {
    BoundaryTrace y;
    BoundaryTrace z;
};

/// (∂ₙy, ∂ₙz, y(T)).
struct AugmentedTrace {
    BoundaryTrace y;
    BoundaryTrace z;
    TerminalState terminal;
};

} // namespace insens
