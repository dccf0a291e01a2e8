#pragma once

#include <stdexcept>
#include <string>

namespace ggdopt {

/// Bad caller input: dimension mismatch, out-of-range parameter.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation called on an object that is not in a usable state.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Numerical failure: non-finite values, singular systems, failed root brackets.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Problem data is well formed but admits no solution.
class InfeasibleError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Objective not strictly convex where a unique minimizer is required.
class IllPosedError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Reverse process left the bounded region.
class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ggdopt
