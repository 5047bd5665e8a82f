#pragma once

#include <stdexcept>
#include <string>

namespace stgcrn {

// Error taxonomy used across the library. The CLI maps these onto stable
// exit codes (see cli.hpp).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/extent mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration value (bad K, empty layer list, unknown tag, ...).
struct ConfigError : Error {
    using Error::Error;
};

// API contract violation (non-scalar backward root, duplicate parameter, ...).
struct ContractError : Error {
    using Error::Error;
};

// Dataset ingestion / degenerate data problems.
struct DataError : Error {
    using Error::Error;
};

// Non-finite values, divergence.
struct NumericError : Error {
    using Error::Error;
};

// Checkpoint/dataset/config disagreement.
struct CompatibilityError : Error {
    using Error::Error;
};

// A test oracle could not run (e.g. non-deterministic loss).
struct OracleError : Error {
    using Error::Error;
};

// Bad command-line invocation.
struct UsageError : Error {
    using Error::Error;
};

}  // namespace stgcrn
