#pragma once

#include "insens/control_approx.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace insens {

/// Orthonormal basis (w_k) of span{V_i·n} in the dσ inner product.
struct DirectionBasis {
    std::vector<PerturbationField> directions;
    std::vector<Eigen::VectorXd> w;   ///< orthonormal normal traces
    Eigen::MatrixXd coefficients;     ///< w_k = Σ_i coefficients(k, i)·(V_i·n)
    std::vector<int> kept;            ///< directions that contributed a new basis vector

    [[nodiscard]] int size() const noexcept { return static_cast<int>(w.size()); }
};

/// Modified Gram–Schmidt on the normal traces; drops a direction whose
/// projected norm falls below 1e−10 of its own norm. Throws
/// AllDirectionsTangent when nothing survives.
DirectionBasis orthonormalize_normal_traces(const std::vector<PerturbationField>& directions,
                                            const BoundaryGeometry& b);

/// Trace targets γ_{k,a,·}, a ∈ {0,1}, indexed as [2k + a].
struct GammaTargets {
    int M = 0;
    double scale = 1.0; ///< y-targets multiplied and z-targets divided by this
    TimeAxis time;
    std::vector<BoundaryTrace> y;
    std::vector<BoundaryTrace> z;
    /// Level ranges [first, last] of the 2M half-windows, in time order.
    std::vector<std::array<int, 2>> half_windows;
};

/// Smallest step count ≥ time.steps divisible by 2M, with the same horizon.
TimeAxis aligned_time(const TimeAxis& time, int M);

/// Each time level belongs to exactly one half-window (the last one also
/// takes t = T); the y-targets are scaled by the reciprocal of the discrete
/// measure of their window so that the product identity is exact under the
/// trapezoidal rule. Throws BadTimeDivision unless 2M divides the step count.
/// `scale` s maps (γ_y, γ_z) to (s·γ_y, γ_z/s), which leaves the product
/// identity unchanged and balances the two trace channels.
GammaTargets build_gamma_targets(const DirectionBasis& basis, const BoundaryGeometry& b, const TimeAxis& time,
                                 double scale = 1.0);

/// T[k][i][j][a][b] = ∫ w_k ∫ (γ_{i,a,y}γ_{j,b,z} + γ_{j,b,y}γ_{i,a,z}) dt dσ, flattened
/// with index ((((k·M + i)·M + j)·2 + a)·2 + b).
std::vector<double> gamma_identity(const GammaTargets& g, const DirectionBasis& basis, const BoundaryGeometry& b);

/// ∫_{∂Ω} w ∫₀ᵀ a·b dt dσ with trapezoidal time weights.
double boundary_time_pairing(const Eigen::VectorXd& w, const BoundaryTrace& a, const BoundaryTrace& b,
                             const BoundaryGeometry& geom);

struct BasisControls {
    int M = 0;
    std::vector<Control> h;          ///< h_{k,a} at [2k + a]
    std::vector<TracePair> traces;   ///< recomputed (∂ₙy, ∂ₙz) of each h_{k,a}
    std::vector<double> error_y;     ///< ‖∂ₙy − γ_{k,a,y}‖
    std::vector<double> error_z;     ///< ‖∂ₙz − γ_{k,a,z}‖
    std::vector<double> terminal;    ///< ‖y(T)‖ of each h_{k,a}
    double alpha = 0.0;
    int cg_iterations = 0;
    bool target_unreachable = false;
    std::vector<double> alpha_history;
    std::vector<double> error_history; ///< max_{k,a} (error_y + error_z) per stage
    std::string note;

    [[nodiscard]] double max_error() const;
};

struct BasisControlOptions {
    bool terminal_bound = false; ///< also drive y_{h_{k,a}}(T) toward 0
    double w_terminal = 10.0;
    bool parallel = false;
    /// Stops the α sweep once it returns true; by default once the largest
    /// combined trace error is ≤ schedule.epsilon.
    std::function<bool(const BasisControls&)> accept;
};

/// Regularized least squares of ℒh toward (γ_{k,a,y}, γ_{k,a,z}) for all 2M
/// pairs, sweeping α jointly with warm starts.
BasisControls compute_basis_controls(const TraceOperator& op, const GammaTargets& targets,
                                     const RegularizationSchedule& schedule, const BasisControlOptions& options = {});

/// U_k(λ) = ½ μᵀP_kμ + ℓ_kᵀμ + c_k with μ_{2j} = λ_j, μ_{2j+1} = |λ_j|.
struct QLCSystem {
    int M = 0;
    std::vector<Eigen::MatrixXd> P; ///< symmetric 2M × 2M per k
    std::vector<Eigen::VectorXd> l;
    Eigen::VectorXd c;
    std::vector<TracePair> basis_traces;
    TracePair xi_traces;

    /// max_k max |P_k − δ_{ijk}𝟙_{a≠b}| over all entries.
    [[nodiscard]] double max_q_deviation() const;
};

QLCSystem assemble_QLC(const DirectionBasis& basis, const std::vector<TracePair>& basis_traces,
                       const TracePair& xi_traces, const BoundaryGeometry& b);

Eigen::VectorXd evaluate_U(const QLCSystem& system, const Eigen::VectorXd& lambda);

/// Σ_j λ_j h_{j,1} + |λ_j| h_{j,2}.
Control assemble_control(const std::vector<Control>& basis_controls, const Eigen::VectorXd& lambda);

/// U_k from an independent cascade solve with source ξ and control h.
Eigen::VectorXd direct_U(const TraceOperator& op, const SpaceTimeField& xi, const Control& h,
                         const DirectionBasis& basis);

enum class LambdaMethod { Trivial, Bisection, DampedFixedPoint, NewtonFallback };

std::string_view to_string(LambdaMethod m) noexcept;

struct LambdaSolveOptions {
    double tol_U = 1e-6;
    double theta = 0.5;
    int max_iterations = 500;
    int restarts = 5;
    std::uint64_t seed = 0;
    double radius = 0.0; ///< ball radius; 0 selects the measured-constant estimate
};

struct LambdaSolveReport {
    Eigen::VectorXd lambda;
    Eigen::VectorXd residual; ///< U_k(λ)
    int iterations = 0;
    LambdaMethod method = LambdaMethod::Trivial;
    double radius = 0.0;
    bool success = false;
    std::string warning;
};

/// Ball radius 2·sqrt(M²ℓ² + M·c) with ℓ = √2·max_k‖ℓ_k‖ and c = max_k|c_k|.
double lambda_ball_radius(const QLCSystem& system);

/// Finds λ with U(λ) = 0: bisection on an expanding bracket for M = 1,
/// damped fixed-point iteration with Newton fallback and seeded restarts for
/// M ≥ 2. Throws NoSolutionFound with the best residual when everything fails.
LambdaSolveReport solve_lambda(const QLCSystem& system, const LambdaSolveOptions& options = {});

struct ExactOptions {
    double epsilon = 1e-3;           ///< kernel L¹ target of the final control
    RegularizationSchedule approx_schedule = RegularizationSchedule::geometric();
    RegularizationSchedule basis_schedule = RegularizationSchedule::geometric();
    LambdaSolveOptions lambda;
    bool parallel = false;
    bool strict = true;              ///< throw VerificationFailed on a failed re-solve check
    /// Optional terminal goal (intersecting geometry only); its kernel
    /// epsilon is ignored in favour of the stage-1 trace target.
    std::optional<TerminalGoal> terminal;
};

struct ExactResult {
    Control h;
    Control h0;
    Control h1;
    DirectionBasis basis;
    BasisControls basis_controls;
    QLCSystem system;
    LambdaSolveReport lambda;
    Eigen::VectorXd U_recomputed;
    double amplification = 0.0;     ///< C of the calibration run
    double epsilon0 = 0.0;
    double stage1_trace_norm = 0.0;
    double kernel_l1_before = 0.0;
    double kernel_l1_after = 0.0;
    double terminal_residual = 0.0;
    double q_deviation = 0.0;
    bool stage1_met = false;
    bool verified = false;
    bool all_tangent = false;
    std::string note;
    double wall_seconds = 0.0;
};

/// Two-stage exact insensitizing over span{V_i}: h₀ makes the traces small,
/// h₁ = Σ λ_j h_{j,1} + |λ_j| h_{j,2} cancels U_k exactly, h = h₀ + h₁.
ExactResult exact_insensitize(const TraceOperator& op, const SpaceTimeField& xi,
                              const std::vector<PerturbationField>& directions, const ExactOptions& options);

} // namespace insens
