#pragma once

#include <stdexcept>
#include <string>

namespace resadapt {

/// Shape mismatch, invalid hyperparameter, unknown domain and similar misuse.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced by an op, SVD non-convergence, training divergence.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A frozen parameter set changed when it must not have.
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Base for all container-format failures (MDTB / MDCK / dataset dirs).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class VersionMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};

class SizeMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};

}  // namespace resadapt
