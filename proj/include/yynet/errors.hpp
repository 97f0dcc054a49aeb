#pragma once

#include <stdexcept>
#include <string>

namespace yynet {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or channel counts do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked in the wrong state (no active tape, step out of range, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A model or training configuration violates its invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data is semantically invalid (label out of range, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its contents are malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared in the loss or in gradients.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace yynet
