#pragma once

#include <stdexcept>
#include <string>

namespace otakf {

/// Bad caller input: wrong dimensions, non-finite values, asymmetric matrices.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical routine could not produce a usable result.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Not enough samples for a statistic (e.g. covariance of fewer than two residuals).
class InsufficientData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file contents; the message names the offending line.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace otakf
