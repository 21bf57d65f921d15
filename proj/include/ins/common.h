// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ins {

// Base for everything thrown by the library. The CLI maps ConfigError and
// ArgumentError to exit code 2, all other Errors to exit code 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad value passed to an operation (shape mismatch, negative density, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration (unknown keys, style count mismatch).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Broken input data (missing files, malformed matrices, undecodable images).
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint container failed validation (bad magic/version, non-finite
// parameters).
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace ins
