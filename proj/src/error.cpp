#include "insens/error.hpp"

namespace insens {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SolverFailure: return "SolverFailure";
    case ErrorCode::PerturbationTooLarge: return "PerturbationTooLarge";
    case ErrorCode::ScheduleExhausted: return "ScheduleExhausted";
    case ErrorCode::GeometryUnsupported: return "GeometryUnsupported";
    case ErrorCode::AllDirectionsTangent: return "AllDirectionsTangent";
    case ErrorCode::BadTimeDivision: return "BadTimeDivision";
    case ErrorCode::TargetUnreachable: return "TargetUnreachable";
    case ErrorCode::NoSolutionFound: return "NoSolutionFound";
    case ErrorCode::VerificationFailed: return "VerificationFailed";
    case ErrorCode::BandTooThin: return "BandTooThin";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void require_size(std::size_t actual, std::size_t expected, std::string_view what) {
    if (actual != expected) {
        throw Error(ErrorCode::DimensionMismatch,
                    std::string(what) + " has " + std::to_string(actual) + " entries, expected " +
                        std::to_string(expected));
    }
}

} // namespace insens
