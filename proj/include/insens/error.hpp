#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace insens {

/// Failure categories reported by the toolkit.
enum class ErrorCode {
    InvalidSpec,
    DimensionMismatch,
    SolverFailure,
    PerturbationTooLarge,
    ScheduleExhausted,
    GeometryUnsupported,
    AllDirectionsTangent,
    BadTimeDivision,
    TargetUnreachable,
    NoSolutionFound,
    VerificationFailed,
    BandTooThin,
    ParseError,
    ValidationError,
    IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception carrying an ErrorCode; the message is prefixed with the code name.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what);

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Throws DimensionMismatch unless `actual == expected`.
void require_size(std::size_t actual, std::size_t expected, std::string_view what);

} // namespace insens
