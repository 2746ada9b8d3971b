#pragma once

#include <stdexcept>
#include <string>

namespace dac {

// Error hierarchy. Each category maps to one CLI exit code (see cli.hpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad arguments to a library call (empty region, p outside [0,1), ...).
class InvalidInput : public Error {
public:
    using Error::Error;
};

class ShapeError : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Corrupt or tampered file: checkpoint, manifest, cache.
class IntegrityError : public Error {
public:
    using Error::Error;
};

// A cache was produced from a different checkpoint than the one in use.
class StalenessError : public IntegrityError {
public:
    using IntegrityError::IntegrityError;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class TrainingError : public NumericError {
public:
    TrainingError(int epoch, const std::string& what)
        : NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + what),
          epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

}  // namespace dac
