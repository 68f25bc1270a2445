#pragma once

#include <stdexcept>
#include <string>

namespace mvhjm {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments, malformed data, violated preconditions. CLI exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure of an otherwise valid computation. CLI exit code 2.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EvaluationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ContractExpired : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class PartitionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class D1Error : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class KernelBoundError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DegenerateControl : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Riccati denominator vanished: the moment condition is violated.
class RiccatiBlowup : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Damping constant violates the exponential-moment validity bound.
class DampingTooLarge : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Gradient descent produced a non-finite state; try another initialization.
class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace mvhjm
