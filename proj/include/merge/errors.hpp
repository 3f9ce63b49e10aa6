// Copyright (c) 2026 The modelmerge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

namespace merge {

/// Base class for every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration problems: bad recipes, hyperparameters out of range,
// infeasible ratio combinations. Mapped to exit code 2 by the CLI.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A method received the wrong number of models (e.g. slerp needs exactly 2).
class ArityError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// A merge was requested with zero models.
class EmptyModelList : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Checkpoint container problems. Mapped to exit code 3 by the CLI.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Malformed safetensors header or index document.
class FormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// A shard referenced by an index file does not exist.
class MissingShard : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// A tensor name was requested that the checkpoint does not contain.
class UnknownTensor : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Tensor rank outside the supported {1, 2} set.
class UnsupportedRank : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Numeric problems in tensor data. Mapped to exit code 4 by the CLI.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Tensor contains NaN or Inf entries.
class InvalidTensor : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Operands disagree on shape or length.
class ShapeMismatch : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Input too small for the requested statistic (e.g. tiers need k >= 3).
class TooSmall : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace merge
