#pragma once

#include <stdexcept>
#include <string>

namespace olor {

// Error taxonomy mirrored by the CLI exit codes: config errors exit 2,
// numeric failures exit 3, I/O failures exit 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Checkpoint loading failures, distinguishable by type so callers can react
// to an old format version differently from a truncated or corrupted file.
struct CheckpointVersionError : IoError {
    using IoError::IoError;
};

struct CheckpointCorruptError : IoError {
    using IoError::IoError;
};

struct CheckpointValueError : IoError {
    using IoError::IoError;
};

// The per-step rollback coefficient rho = lr_t * lambda_i left [0, 1]; the
// learning-rate schedule is incompatible with the configured rollback level.
struct ScheduleIncompatibilityError : NumericError {
    using NumericError::NumericError;
};

inline int exit_code_for(const Error& err) {
    if (dynamic_cast<const ConfigError*>(&err) != nullptr) return 2;
    if (dynamic_cast<const NumericError*>(&err) != nullptr) return 3;
    if (dynamic_cast<const IoError*>(&err) != nullptr) return 4;
    return 1;
}

}  // namespace olor
