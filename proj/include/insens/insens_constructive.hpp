#pragma once

#include "insens/pde.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace insens {

/// r(s) = 6s⁵ − 15s⁴ + 10s³ on [0,1], clamped to 0 below and 1 above.
struct RampValue {
    double value = 0.0;
    double d1 = 0.0; ///< dr/ds
    double d2 = 0.0; ///< d²r/ds²
};

RampValue quintic_ramp(double s);

/// Nodal values of a cutoff η with its gradient and Laplacian taken from the
/// closed-form blend.
struct CutoffFunction {
    int nx = 0, ny = 0;
    double hx = 0.0, hy = 0.0;
    Eigen::VectorXd values;
    Eigen::VectorXd grad_x;
    Eigen::VectorXd grad_y;
    Eigen::VectorXd laplacian;

    /// η ≡ c on the grid.
    static CutoffFunction constant(const Grid& grid, double c);

    /// Nodes where 0 < η < 1 or a derivative of η is nonzero.
    [[nodiscard]] std::vector<int> band() const;
};

/// Pointwise product with the product rule for the derivatives.
CutoffFunction operator*(const CutoffFunction& a, const CutoffFunction& b);

/// η = 0 on `zero_region`, η = 1 outside `one_region_complement`, blended by
/// quintic ramps (per axis for rectangles, in the radius for disks and
/// concentric annuli). The ramp stops one cell short of the outer set so
/// that the 5-point commutator also vanishes outside it. An empty zero region
/// gives η ≡ 1. Throws BandTooThin when fewer than 3 cells separate the two
/// sets and GeometryUnsupported for shape pairs without a blend.
CutoffFunction build_cutoff(const Grid& grid, const std::optional<RegionShape>& zero_region,
                            const RegionShape& one_region_complement);

/// η = 1 for |x − c| ≤ r_one, η = 0 for |x − c| ≥ r_zero.
CutoffFunction build_radial_cutoff(const Grid& grid, double cx, double cy, double r_one, double r_zero);

/// [Δ, η]f = 2∇η·∇f + fΔη with the analytic derivatives of η and centred
/// differences (zero Dirichlet data) for ∇f.
SpaceTimeField commutator_apply(const CutoffFunction& eta, const SpaceTimeField& f);

/// A(ηf) − ηAf for the 5-point Dirichlet Laplacian A, evaluated through the
/// stencil expansion Σ_nb (η_nb − η_k) f_nb / h².
SpaceTimeField discrete_commutator(const CutoffFunction& eta, const SpaceTimeField& f);

enum class CommutatorKind {
    Discrete, ///< 5-point commutator: the discrete construction is exact
    Analytic, ///< analytic derivatives of η: consistent up to O(h²)
};

std::string_view to_string(CommutatorKind kind) noexcept;

/// Discretization of (∂ₜ − Δ)W for the boundary construction.
enum class TimeDerivativeRule {
    /// Centred differences inside, one-sided at t = 0 and t = T.
    Centered,
    /// gⁿ chosen so that ½(gⁿ + gⁿ⁺¹) equals the Crank–Nicolson residual of W
    /// on every step, starting from the one-sided value at t = 0.
    SchemeConsistent,
};

std::string_view to_string(TimeDerivativeRule rule) noexcept;

struct ConstructiveOptions {
    CommutatorKind commutator = CommutatorKind::Discrete;
    TimeDerivativeRule time_rule = TimeDerivativeRule::SchemeConsistent;
    /// Exact route: sup|z₀| relative to sup|y₀|.
    double tol_z0 = 1e-13;
    /// Exact route: kernel L¹ relative to the uncontrolled kernel L¹.
    double tol_exact = 1e-12;
    /// Boundary route: sup of z₀ on Ω₀∖Θ relative to sup|z₀|.
    double tol_c = 1e-3;
    bool strict = true; ///< throw VerificationFailed when a check fails
};

/// Radii of the nested annuli ω₀ ⋐ ω₁ ⋐ ω₂ ⋐ ω₃ around ∂Θ.
struct NestedBands {
    double cx = 0.0, cy = 0.0;
    double radius = 0.0;          ///< radius of Θ
    std::array<double, 4> inner{}; ///< inner radius of ω₀..ω₃
    std::array<double, 4> outer{}; ///< outer radius of ω₀..ω₃
};

/// Splits each side of the control annulus into a one-cell margin, the half
/// width of ω₀ and three equal ramps. Throws GeometryUnsupported unless Θ is
/// a disk and ω a concentric annulus containing ∂Θ, and BandTooThin when the
/// annulus is narrower than 12 cells or one side narrower than 6.
NestedBands nested_bands(const Grid& grid);

struct ConstructionReport {
    Control h;
    SpaceTimeField y0;            ///< re-solved state
    SpaceTimeField z0;            ///< re-solved adjoint
    SpaceTimeField y0_expected;   ///< state the construction aims at
    double support_violation = 0.0; ///< max |h| on nodes outside ω
    bool support_ok = false;
    double y0_defect = 0.0;       ///< ‖y₀ − y0_expected‖ / ‖y_ξ‖
    double initial_defect = 0.0;  ///< ‖y0_expected(0)‖ / max level norm of y0_expected
    double z0_sup = 0.0;          ///< max |z₀|
    double z0_outside = 0.0;      ///< max |z₀| on Ω₀∖Θ
    double z0_theta = 0.0;        ///< max |z₀| on Θ (exact route: should vanish)
    double kernel_l1 = 0.0;
    double kernel_l1_uncontrolled = 0.0;
    bool verified = false;
    std::string note;
};

/// Θ ⋐ ω: y₀ = ηy_ξ with η = 1 on Ω₀∖ω and η = 0 on Θ, generated by
/// h = (η − 1)ξ − [Δ, η]y_ξ. Verified by re-solving the cascade.
ConstructionReport construct_theta_in_omega(const HeatPropagator& heat, const SpaceTimeField& xi,
                                            const ConstructiveOptions& options = {});

/// ∂Θ ⊂ ω for a disk Θ and an annular ω:
/// h = (η₀₁η₁₂η₂₃ − 1)ξ − [Δ, η₀₁η₁₂]y_ξ − (∂ₜ − Δ)([Δ, 𝟙_Θη₀₁]z_ξ),
/// with y_ξ driven by η₂₃ξ and z_ξ by η₁₂y_ξ𝟙_Θ; see TimeDerivativeRule for
/// the last term. Verified by re-solving the cascade and measuring z₀ on Ω₀∖Θ.
ConstructionReport construct_boundary_theta(const HeatPropagator& heat, const SpaceTimeField& xi,
                                            const ConstructiveOptions& options = {});

} // namespace insens
