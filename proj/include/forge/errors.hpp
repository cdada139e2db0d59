#ifndef FORGE_ERRORS_HPP
#define FORGE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace forge {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// --- expression parsing / evaluation ---
struct IncompleteExpressionError : Error {
    explicit IncompleteExpressionError(const std::string& msg) : Error(msg) {}
};
struct TrailingTokensError : Error {
    explicit TrailingTokensError(const std::string& msg) : Error(msg) {}
};
struct UnknownTokenError : Error {
    explicit UnknownTokenError(const std::string& msg) : Error(msg) {}
};
struct NonFiniteError : Error {
    explicit NonFiniteError(const std::string& msg) : Error(msg) {}
};
struct DimensionMismatchError : Error {
    explicit DimensionMismatchError(const std::string& msg) : Error(msg) {}
};
struct DegenerateProbeError : Error {
    explicit DegenerateProbeError(const std::string& msg) : Error(msg) {}
};
struct ResampleExhaustedError : Error {
    explicit ResampleExhaustedError(const std::string& msg) : Error(msg) {}
};

// --- integration ---
struct StepUnderflowError : Error {
    explicit StepUnderflowError(const std::string& msg) : Error(msg) {}
};
struct MaxStepsExceededError : Error {
    explicit MaxStepsExceededError(const std::string& msg) : Error(msg) {}
};
struct NonFiniteStateError : Error {
    explicit NonFiniteStateError(const std::string& msg) : Error(msg) {}
};

// --- data generation ---
struct RejectionExhaustedError : Error {
    explicit RejectionExhaustedError(const std::string& msg) : Error(msg) {}
};

// --- generator / verifier ---
struct TooManyInvalidPointsError : Error {
    explicit TooManyInvalidPointsError(const std::string& msg) : Error(msg) {}
};
struct AcceptanceTooLowError : Error {
    explicit AcceptanceTooLowError(const std::string& msg) : Error(msg) {}
};

// --- experiments / config ---
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error(msg) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace forge

#endif
