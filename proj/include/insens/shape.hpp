#pragma once

#include "insens/domain.hpp"
#include "insens/fields.hpp"
#include "insens/pde.hpp"

#include <functional>
#include <vector>

namespace insens {

/// k(x) = ∫₀ᵀ ∂ₙy ∂ₙz dt at each boundary sample (trapezoidal in time).
struct SensitivityKernel {
    Eigen::VectorXd values;
};

/// J = ½ ∫₀ᵀ ∫_Θ y² with the Θ mask as spatial weight.
double evaluate_J(const Grid& grid, const SpaceTimeField& y);

SensitivityKernel sensitivity_kernel(const BoundaryTrace& y_trace, const BoundaryTrace& z_trace);

/// ∫_{∂Ω} (V·n) k dσ.
double directional_derivative(const SensitivityKernel& kernel, const PerturbationField& v, const BoundaryGeometry& b);

/// ∫_{∂Ω} |k| dσ.
double kernel_l1_norm(const SensitivityKernel& kernel, const BoundaryGeometry& b);

/// Kernel of the cascade driven by ξ and h on the grid of `ops`.
SensitivityKernel cascade_kernel(const TraceOperator& ops, const SpaceTimeField& xi, const Control& h);

/// Scalar field of (t, x, y) in absolute coordinates.
using SpaceTimeFunction = std::function<double(double t, double x, double y)>;

/// Samples `f` on the nodes of `grid`, whose origin sits at absolute (ox, oy).
SpaceTimeField sample(const SpaceTimeFunction& f, const Grid& grid, const TimeAxis& time, double ox = 0.0,
                      double oy = 0.0);

/// Bilinear interpolant of a nodal field (zero Dirichlet extension), for
/// resampling data onto re-gridded rectangles.
SpaceTimeFunction bilinear(const SpaceTimeField& field, const Grid& grid);

struct FiniteDifferenceSample {
    double tau = 0.0;
    double j_plus = 0.0;
    double j_minus = 0.0;
    double fd_value = 0.0;
};

struct FiniteDifferenceResult {
    std::vector<FiniteDifferenceSample> samples;
    double extrapolated = 0.0; ///< Richardson value when two steps are given
};

/// Centered difference (J(Ω_τ) − J(Ω_{−τ}))/(2τ) along a rectangle-preserving
/// face dilation, each J from a fresh cascade solve on the dilated rectangle
/// with the same node counts. Data stay fixed in absolute coordinates; masks
/// use cell-overlap fractions on the re-gridded rectangles. With two steps
/// τ₁ = 2τ₂ the result also carries (4D(τ₂) − D(τ₁))/3.
/// Throws PerturbationTooLarge if ω or Θ leaves a perturbed rectangle.
FiniteDifferenceResult finite_difference_dJ(const DomainSpec& spec, const TimeAxis& time, const SpaceTimeFunction& xi,
                                            const SpaceTimeFunction& h, Face face, const std::vector<double>& taus);

} // namespace insens
