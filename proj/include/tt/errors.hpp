#pragma once

// Error taxonomy for the whole library. The CLI maps these onto exit codes:
// shape/contract/config/numeric errors -> 1, I/O and checkpoint errors -> 2.

#include <stdexcept>
#include <string>

namespace tt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension or extent mismatch between tensors; message carries both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition or postcondition of an operation was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid model/run configuration (bad preset name, malformed config file, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An operation produced NaN or Inf; silent propagation is forbidden.
class NumericError : public Error {
 public:
  using Error::Error;
};

// File system and serialization failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint parsing failures carry a distinct code per failure mode.
class CheckpointError : public IoError {
 public:
  enum class Code {
    bad_magic,
    bad_version,
    truncated,
    name_mismatch,
    dtype_mismatch,
    shape_mismatch,
    config_mismatch,
  };

  CheckpointError(Code code, const std::string& msg) : IoError(msg), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

}  // namespace tt
