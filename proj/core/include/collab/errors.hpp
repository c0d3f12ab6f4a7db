#pragma once

#include <stdexcept>
#include <string>

namespace collab {

/// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dimension mismatch between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid argument value (bad mode, index out of range, non-positive tolerance, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Numerical failure: iteration cap reached, divergence, non-finite results.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Malformed serialized input (manifest fields of the wrong type or missing).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Structurally valid input that violates a consistency rule
/// (overlapping offsets, inconsistent shapes, missing tensors).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure (missing file, unwritable output).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace collab
