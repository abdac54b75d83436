#pragma once

#include "insens/control_approx.hpp"
#include "insens/insens_constructive.hpp"
#include "insens/insens_exact_fd.hpp"
#include "insens/shape.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace insens {

enum class SourceFamily { Zero, Eigenmode, GaussianBump };

std::string_view to_string(SourceFamily f) noexcept;

/// Analytic source ξ(t, x, y) in absolute coordinates.
struct SourceConfig {
    SourceFamily family = SourceFamily::GaussianBump;
    double amplitude = 1.0;
    int i = 1, j = 1;                      ///< eigenmode sin(iπx/lx)·sin(jπy/ly)
    double cx = 0.5, cy = 0.5, s = 0.1;    ///< bump exp(−|x − c|²/(2s²))
    std::optional<std::array<double, 2>> window; ///< active for t0 ≤ t ≤ t1 only
    std::optional<RegionShape> support;    ///< multiplied by the indicator of this region

    [[nodiscard]] SpaceTimeFunction function(const DomainSpec& domain) const;
};

struct ControlConfig {
    double epsilon = 1e-3;
    double alpha_start = 1e-2;
    double alpha_end = 1e-10;
    double alpha_factor = 10.0;
    double cg_tol = 1e-10;
    int cg_maxit = 2000;
    TerminalMode terminal_mode = TerminalMode::None;
    double w_trace = 1.0;
    double w_terminal = 10.0;
    /// y_T = amplitude·sin(iπx/lx)·sin(jπy/ly) for the approximate terminal mode.
    int target_i = 1, target_j = 1;
    double target_amplitude = 0.1;
    /// ‖y(T) − y_T‖ tolerance; unset means 0.05·‖y_T‖.
    std::optional<double> terminal_epsilon;
    /// Reduction factor of ‖y(T)‖ for the null mode.
    double null_reduction = 1e-3;

    [[nodiscard]] RegularizationSchedule schedule() const;
};

struct DirectionsConfig {
    std::vector<Face> faces;                ///< face dilations
    std::vector<std::string> sample_files;  ///< V·n samples, one per boundary point
    double tol_U = 1e-6;
};

enum class ConstructiveVariant { ThetaInOmega, BoundaryTheta };

std::string_view to_string(ConstructiveVariant v) noexcept;

struct ConstructiveConfig {
    ConstructiveVariant variant = ConstructiveVariant::ThetaInOmega;
    CommutatorKind commutator = CommutatorKind::Discrete;
    TimeDerivativeRule time_rule = TimeDerivativeRule::SchemeConsistent;
    double tol_c = 1e-3;
};

struct VerifyConfig {
    Face face = Face::Right;
    std::vector<double> taus{1e-2, 5e-3};
    double tolerance = 0.05; ///< relative error of the extrapolated value
};

struct OutputConfig {
    std::string dir = "insenskit-out";
    bool fields = true;  ///< control.bin and xi.bin
    bool csv = false;    ///< control.csv as well
    bool svg = false;    ///< kernel.svg and schedule.svg
};

struct ScenarioConfig {
    DomainSpec domain;
    bool case_inferred = false; ///< `case` absent; set from the region closures
    TimeAxis time{1.0, 64};
    SourceConfig source;
    ControlConfig control;
    DirectionsConfig directions;
    ConstructiveConfig constructive;
    VerifyConfig verify;
    OutputConfig output;
    std::string origin; ///< file name used in error positions
};

/// Parses a scenario file. Unknown sections and keys, wrong value types and
/// malformed syntax raise ParseError with line:column; missing or invalid
/// settings raise ValidationError naming the section and key.
ScenarioConfig parse_config(const std::string& path);
ScenarioConfig parse_config_text(const std::string& text, const std::string& origin = "<string>");

/// The parsed configuration with every default filled in.
nlohmann::json config_to_json(const ScenarioConfig& config);

enum class Subcommand { VerifyShapeDerivative, VerifyControl, RunApprox, RunExactFd, RunConstructive };

/// "verify shape-derivative", "verify control", "run approx", "run exact-fd", "run constructive".
std::string_view to_string(Subcommand s) noexcept;

/// Throws ValidationError for unknown pairs.
Subcommand parse_subcommand(const std::string& verb, const std::string& target);

struct RunOptions {
    std::uint64_t seed = 0;
    bool parallel = false;
    std::optional<std::string> out_dir;      ///< overrides [output].dir
    std::optional<std::string> control_file; ///< input of `verify control`
    bool write_files = true;
};

struct RunReport {
    nlohmann::json json;
    bool criteria_met = false;
    int exit_code = 1; ///< 0 criteria met, 2 best effort
    std::vector<std::string> files;
};

/// Runs one pipeline, then writes report.json, summary.csv, kernel.dat,
/// schedule.dat (when there is an α sweep), shape_derivative.csv (verify),
/// control.bin and xi.bin. Every reported norm is recomputed from a fresh
/// cascade solve. Errors propagate with the subcommand as context.
RunReport run_scenario(const ScenarioConfig& config, Subcommand subcommand, const RunOptions& options = {});

/// Deterministic 16-hex-digit identifier of (config echo, subcommand, seed).
std::string run_id(const ScenarioConfig& config, Subcommand subcommand, std::uint64_t seed);

} // namespace insens
