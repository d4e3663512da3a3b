#pragma once

#include <stdexcept>
#include <string>

namespace dapn {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad arguments, shape mismatches, violated preconditions.
struct ValidationError : Error {
    using Error::Error;
};

/// Malformed configuration (unknown enum names, bad key/value files).
struct ConfigError : Error {
    using Error::Error;
};

/// Episode/pool sampling cannot be satisfied.
struct SamplingError : Error {
    using Error::Error;
};

/// Filesystem and codec failures.
struct IoError : Error {
    using Error::Error;
};

/// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace dapn
