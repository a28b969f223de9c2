#pragma once

#include <stdexcept>
#include <string>

namespace chorus {

// Caller broke a documented precondition (shape mismatch, empty batch, ...).
struct ContractViolation : std::runtime_error {
    explicit ContractViolation(const std::string& what) : std::runtime_error(what) {}
};

// Bad user-facing configuration (negative lr, unknown key, invalid regime name).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf surfaced inside a computation; message names the offending node.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace chorus
