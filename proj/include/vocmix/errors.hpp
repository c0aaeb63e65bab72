#pragma once

#include <stdexcept>
#include <string>

namespace vocmix {

// Invalid parameters, malformed inputs, contract violations. Exit code 1 in the CLI.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parse failures; messages carry the offending line or byte offset.
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Filesystem and encoding-environment failures. Exit code 2 in the CLI.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or other training aborts; message carries step, lr, batch digest.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vocmix
