// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace meg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes, dimensions, or configuration values that violate a precondition.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared in a forward pass, gradient, or update.
/// `row` is the offending batch row when known, otherwise -1.
class NumericFault : public Error {
 public:
  explicit NumericFault(const std::string& what, std::int64_t row = -1)
      : Error(row >= 0 ? what + " (row " + std::to_string(row) + ")" : what), row_(row) {}
  std::int64_t row() const { return row_; }

 private:
  std::int64_t row_;
};

/// Evaluation protocol violated (e.g. classifier output outside [0, M)).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Operation refused because the input lies outside its supported scope.
class ScopeError : public Error {
 public:
  using Error::Error;
};

/// Corrupt or truncated container.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public Error {
 public:
  using Error::Error;
};

/// Missing or malformed input dataset.
class IngestionError : public Error {
 public:
  using Error::Error;
};

}  // namespace meg
