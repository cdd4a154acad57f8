#pragma once

#include <stdexcept>
#include <string>

namespace ecmc {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or index mismatch between tensors / sequences.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A caller violated an operation's precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

// NaN/Inf produced, divergence, or other numerical breakdown.
class NumericError : public Error {
public:
    using Error::Error;
};

// Input is numerically degenerate (e.g. a near-zero row fed to a normalizer).
class DegenerateInputError : public NumericError {
public:
    using NumericError::NumericError;
};

// Invalid configuration value or unknown key.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed file content; message names the file and offending location.
class ParseError : public Error {
public:
    using Error::Error;
};

// Filesystem-level failure (missing file, write failure).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace ecmc
