#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Error hierarchy. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of a function (e.g. t outside a schedule).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, failed factorizations, solver non-convergence.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated serialized data.
class FormatError : public Error {
public:
    using Error::Error;
};

/// The requested operation is not supported by this object (e.g. VJP on a plain function).
class CapabilityError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace dc
