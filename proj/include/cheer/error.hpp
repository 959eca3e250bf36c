#pragma once

#include <stdexcept>
#include <string>

namespace cheer {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user input: bad configuration, out-of-range arguments, malformed
/// files. The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class UnboundInputError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A NaN or Inf appeared while evaluating a graph or objective.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Normal equations are singular; a positive ridge coefficient is required.
class RankDeficientError : public Error {
 public:
  using Error::Error;
};

/// A bound or constant is undefined for the given inputs (e.g. phi = 0).
class VacuousBoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace cheer
