#pragma once

#include <stdexcept>
#include <string>

namespace foem {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user configuration (bad bit width, unknown engine, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Operation called in the wrong state (e.g. accumulate after damping).
class StateError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

class MissingTensorError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Cholesky breakdown; `pivot` is the first column whose pivot was not positive.
class FactorizationError : public NumericalError {
 public:
  FactorizationError(const std::string& what, long pivot) : NumericalError(what), pivot_(pivot) {}
  long pivot() const noexcept { return pivot_; }

 private:
  long pivot_;
};

}  // namespace foem
