#pragma once

#include <stdexcept>
#include <string>

namespace claimcast {

/// Malformed or inconsistent input data (bad CSV rows, schema violations,
/// out-of-range config values). CLI maps this to exit code 3.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric failure at runtime: NaN activations, diverging training,
/// undefined development factors. CLI maps this to exit code 4.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace claimcast
