#pragma once

#include "insens/domain.hpp"
#include "insens/fields.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <memory>

namespace insens {

/// 5-point Dirichlet Laplacian on the interior nodes of `grid`.
Eigen::SparseMatrix<double> dirichlet_laplacian(const Grid& grid);

/// Crank–Nicolson heat propagator on a fixed grid and time axis.
///
/// Forward:  (I − dt/2·A) yⁿ⁺¹ = (I + dt/2·A) yⁿ + dt/2 (fⁿ + fⁿ⁺¹),  y⁰ = 0.
/// Backward: (I − dt/2·A) zⁿ   = (I + dt/2·A) zⁿ⁺¹ + dt/2 (sⁿ + sⁿ⁺¹), z^{nt} = 0.
///
/// The factorization of I − dt/2·A is computed once and shared read-only,
/// so concurrent solves on one propagator are safe.
class HeatPropagator {
public:
    HeatPropagator(const Grid& grid, TimeAxis time);

    [[nodiscard]] const Grid& grid() const noexcept { return *grid_; }
    [[nodiscard]] const TimeAxis& time() const noexcept { return time_; }
    [[nodiscard]] const Eigen::SparseMatrix<double>& laplacian() const noexcept { return laplacian_; }

    [[nodiscard]] SpaceTimeField forward(const SpaceTimeField& source) const;
    [[nodiscard]] SpaceTimeField backward(const SpaceTimeField& source) const;

    /// Transpose of source ↦ (yⁿ)ₙ with respect to the unweighted Euclidean
    /// pairing on all levels: maps level cotangents to source cotangents.
    [[nodiscard]] SpaceTimeField forward_transpose(const SpaceTimeField& cotangent) const;
    [[nodiscard]] SpaceTimeField backward_transpose(const SpaceTimeField& cotangent) const;

    /// ξ + 1_ω·h sampled on the nodes.
    [[nodiscard]] SpaceTimeField embed(const Control& h) const;
    /// Transpose of `embed` restricted to the control part (mask-weighted restriction).
    [[nodiscard]] Control restrict_to_omega(const SpaceTimeField& f) const;

private:
    void check_source(const SpaceTimeField& f) const;
    [[nodiscard]] Eigen::VectorXd solve_step(const Eigen::VectorXd& rhs) const;

    std::shared_ptr<const Grid> grid_;
    TimeAxis time_;
    Eigen::SparseMatrix<double> laplacian_;
    Eigen::SparseMatrix<double> explicit_part_; // I + dt/2·A
    std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> implicit_part_;
};

/// Forward solve with zero initial state: ∂ₜy − Δy = ξ + h·1_ω.
SpaceTimeField solve_forward(const HeatPropagator& heat, const SpaceTimeField& xi, const Control& h);
/// Backward solve with zero terminal state: −∂ₜz − Δz = source.
SpaceTimeField solve_backward(const HeatPropagator& heat, const SpaceTimeField& source);

struct CascadeSolution {
    SpaceTimeField y;
    SpaceTimeField z;
};

/// y = forward(ξ + h·1_ω), z = backward(1_Θ·y).
CascadeSolution solve_cascade(const HeatPropagator& heat, const SpaceTimeField& xi, const Control& h);

/// Sparse map from node values to outward normal derivatives at the boundary
/// samples: ∂ₙu ≈ −(4u₁ − u₂)/(2h).
Eigen::SparseMatrix<double> neumann_matrix(const Grid& grid);

/// One-sided second-order outward normal derivative at every boundary sample, every level.
BoundaryTrace neumann_trace(const SpaceTimeField& field, const Grid& grid);

Control zero_control(const Grid& grid, const TimeAxis& time);
SpaceTimeField zero_field(const Grid& grid, const TimeAxis& time);

// ---------------------------------------------------------------------------
// Discrete inner products (trapezoidal in time)
// ---------------------------------------------------------------------------

double inner(const BoundaryTrace& a, const BoundaryTrace& b, const Grid& grid);
double inner(const Control& a, const Control& b, const Grid& grid);
double inner(const SpaceTimeField& a, const SpaceTimeField& b, const Grid& grid);
double inner(const TerminalState& a, const TerminalState& b, const Grid& grid);
double inner(const TracePair& a, const TracePair& b, const Grid& grid);
double inner(const AugmentedTrace& a, const AugmentedTrace& b, const Grid& grid);

double norm(const BoundaryTrace& a, const Grid& grid);
double norm(const Control& a, const Grid& grid);
double norm(const SpaceTimeField& a, const Grid& grid);
double norm(const TerminalState& a, const Grid& grid);

/// Spatial L² norm of one time level.
double level_norm(const SpaceTimeField& a, int level, const Grid& grid);

// ---------------------------------------------------------------------------
// Control-to-trace operator
// ---------------------------------------------------------------------------

/// h ↦ (∂ₙy_h, ∂ₙz_h) and its augmented version with y_h(T), together with
/// exact discrete transposes for the weighted inner products above.
class TraceOperator {
public:
    explicit TraceOperator(std::shared_ptr<const HeatPropagator> heat);

    [[nodiscard]] const HeatPropagator& heat() const noexcept { return *heat_; }
    [[nodiscard]] const Grid& grid() const noexcept { return heat_->grid(); }
    [[nodiscard]] const TimeAxis& time() const noexcept { return heat_->time(); }

    [[nodiscard]] TracePair apply(const Control& h) const;
    [[nodiscard]] Control apply_transpose(const TracePair& g) const;

    [[nodiscard]] AugmentedTrace apply_augmented(const Control& h) const;
    [[nodiscard]] Control apply_augmented_transpose(const AugmentedTrace& g) const;

    /// Traces (and terminal slice) of a full cascade with source ξ and control h.
    [[nodiscard]] AugmentedTrace observe(const SpaceTimeField& xi, const Control& h) const;

private:
    [[nodiscard]] Control transpose_impl(const BoundaryTrace& gy, const BoundaryTrace& gz,
                                         const Eigen::VectorXd* terminal) const;

    std::shared_ptr<const HeatPropagator> heat_;
    Eigen::SparseMatrix<double> neumann_;
};

} // namespace insens
