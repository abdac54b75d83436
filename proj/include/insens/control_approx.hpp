#pragma once

#include "insens/pde.hpp"
#include "insens/shape.hpp"

#include <optional>
#include <string>
#include <vector>

namespace insens {

enum class TerminalMode { None, Approximate, Null };

std::string_view to_string(TerminalMode mode) noexcept;

/// Desired traces (f₁, f₂) and, optionally, a terminal state.
struct TraceTarget {
    BoundaryTrace f1;
    BoundaryTrace f2;
    std::optional<TerminalState> y_T;
    TerminalMode terminal_mode = TerminalMode::None;
    double w_trace = 1.0;
    double w_terminal = 10.0;

    /// Zero traces, no terminal channel.
    static TraceTarget zero(const Grid& grid, const TimeAxis& time);
    void validate(const Grid& grid, const TimeAxis& time) const;
};

struct RegularizationSchedule {
    std::vector<double> alphas;
    double cg_tol = 1e-10;
    int cg_maxit = 2000;
    double epsilon = 1e-3; ///< stop once the recomputed residual reaches this level

    /// α₀, α₀/f, α₀/f², ... down to α_end.
    static RegularizationSchedule geometric(double start = 1e-2, double end = 1e-10, double factor = 10.0);
    void validate() const;
};

/// One stage of the α sweep, with residuals recomputed from a fresh cascade.
struct ScheduleStep {
    double alpha = 0.0;
    int cg_iterations = 0;
    bool cg_converged = false;
    double misfit = 0.0;          ///< weighted squared data misfit (no penalty term)
    double trace_residual = 0.0;  ///< sqrt(‖∂ₙy − f₁‖² + ‖∂ₙz − f₂‖²)
    double terminal_residual = 0.0;
    double kernel_l1 = 0.0;
};

struct ControlResult {
    Control h;
    double residual_y = 0.0;        ///< ‖∂ₙy − f₁‖
    double residual_z = 0.0;        ///< ‖∂ₙz − f₂‖
    double residual_terminal = 0.0; ///< ‖y(T) − y_T‖ (or ‖y(T)‖ for null control)
    double trace_norm_y = 0.0;      ///< ‖∂ₙy‖
    double trace_norm_z = 0.0;      ///< ‖∂ₙz‖
    double terminal_norm = 0.0;     ///< ‖y(T)‖
    double kernel_l1_before = 0.0;  ///< kernel norm of the uncontrolled cascade
    double kernel_l1_after = 0.0;
    double cauchy_schwarz_bound = 0.0; ///< ‖∂ₙy‖·‖∂ₙz‖, an upper bound for kernel_l1_after
    double alpha = 0.0;
    int cg_iterations = 0;
    double wall_seconds = 0.0;
    bool criteria_met = false;
    bool schedule_exhausted = false;
    bool solver_failure = false;
    std::vector<ScheduleStep> history;
    std::vector<Control> stages; ///< (h_nc, h₁) on the two-stage null path
    std::string note;
};

/// Channel weights of the least-squares misfit.
struct ChannelWeights {
    double y = 1.0;
    double z = 1.0;
    double terminal = 0.0;
};

struct CGReport {
    int iterations = 0;
    bool converged = false;
    double relative_residual = 0.0;
};

/// Solves (ℒᵀWℒ + α)h = ℒᵀW·r by conjugate gradients in the control inner
/// product, starting from `h` (updated in place).
CGReport tikhonov_solve(const TraceOperator& op, const AugmentedTrace& r, const ChannelWeights& w, double alpha,
                        Control& h, double tol, int maxit);

/// Sweeps the α schedule on min ‖ℒ̃h − (target − uncontrolled)‖²_w + α‖h‖².
/// Stops once the recomputed trace/terminal residual norm is ≤ schedule.epsilon.
ControlResult approx_trace_control(const TraceOperator& op, const SpaceTimeField& xi, const TraceTarget& target,
                                   const RegularizationSchedule& schedule, bool allow_disjoint_terminal = false);

/// Zero trace targets; succeeds once the kernel L¹ norm is ≤ ε.
ControlResult approx_insensitize(const TraceOperator& op, const SpaceTimeField& xi, double epsilon,
                                 const RegularizationSchedule& schedule);

/// Terminal-only least squares driving ‖y(T)‖ down; succeeds once it is
/// ≤ 1e−3 × the uncontrolled terminal norm.
ControlResult null_control(const TraceOperator& op, const SpaceTimeField& xi, const RegularizationSchedule& schedule);

struct TerminalGoal {
    TerminalMode mode = TerminalMode::Approximate;
    std::optional<TerminalState> y_T;  ///< required for Approximate
    double kernel_epsilon = 1e-3;      ///< success: kernel L¹ ≤ this
    double terminal_epsilon = 1e-3;    ///< success: ‖y(T) − y_T‖ ≤ this (Approximate)
    double null_reduction = 1e-3;      ///< success: ‖y(T)‖ ≤ this × uncontrolled (Null)
    /// When positive, the kernel criterion is replaced by ‖(∂ₙy, ∂ₙz)‖ ≤ this.
    double trace_epsilon = 0.0;
    double w_trace = 1.0;
    double w_terminal = 10.0;
};

/// Insensitizing plus terminal control (intersecting geometry only unless
/// `allow_disjoint` is set, which is experimental).
ControlResult insensitize_with_terminal(const TraceOperator& op, const SpaceTimeField& xi, const TerminalGoal& goal,
                                        const RegularizationSchedule& schedule, bool allow_disjoint = false);

/// Additive correction in span{ℒᵀfⱼ} making the projection of ℒ(h + c) onto
/// span{fⱼ} equal that of `target`, for an orthonormal or merely independent
/// family {fⱼ}. Returns h + c.
Control project_onto_traces(const TraceOperator& op, const Control& h, const TracePair& target,
                            const std::vector<TracePair>& family);

} // namespace insens
