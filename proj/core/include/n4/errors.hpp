#pragma once

#include <stdexcept>
#include <string>

namespace n4 {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument values (empty collections, out-of-range counts, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Dimension or layout mismatch between related values.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Pixel coordinates outside the valid range.
class CoordinateError : public Error {
public:
    using Error::Error;
};

/// Operation invoked on an object in the wrong state (empty dictionary, stale cache).
class StateError : public Error {
public:
    using Error::Error;
};

/// Inconsistent configuration (layer stacks, config files, flags).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File parsing / serialization failures.
class IoError : public Error {
public:
    using Error::Error;
};

/// Raised when an optimization step encounters non-finite values.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace n4
