#pragma once

#include <stdexcept>
#include <string>

namespace exagree {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operand shapes do not conform (message names both shapes).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Index outside a table/vocabulary.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Operation called in an invalid object state (e.g. second backward on a tape).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A caller-side contract was violated (non-scalar loss, mismatched lengths, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Sequence length outside the admissible range.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Requested computation exceeds a declared capability limit.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// Training failed; carries the epoch at which it happened.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& msg, int epoch)
      : Error(msg + " (epoch " + std::to_string(epoch) + ")"), epoch(epoch) {}
  int epoch;
};

/// Malformed input file; carries a 1-based line number when known.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg, long line = -1)
      : Error(line >= 0 ? "line " + std::to_string(line) + ": " + msg : msg), line(line) {}
  long line;
};

/// Structurally valid input with an invalid field value.
class SchemaError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// Numerical failure (singular system, divergence detected outside training).
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace exagree
