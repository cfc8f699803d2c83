#pragma once

#include <stdexcept>
#include <string>

namespace salt {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape/extent mismatches between tensors or between tensors and ops.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (model, partitioning, CLI, schedule).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (files, particles, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

/// API misuse: a precondition that is the caller's responsibility.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value produced by a forward computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint file corrupt or incompatible with the requested config.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or cannot proceed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Metric undefined for the given inputs (e.g. single-class labels).
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace salt
