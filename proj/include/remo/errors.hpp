#pragma once

#include <stdexcept>
#include <string>

namespace remo {

// Bad hyperparameters, malformed config files, empty datasets.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data: parse failures, shape mismatches, unknown fields.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures: NaN at a tape boundary, degenerate rotations,
// rank-deficient alignments.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace remo
