#pragma once

#include <stdexcept>
#include <string>

namespace taxpose {

// Base for every recoverable failure raised by the library. The CLI maps
// NumericalError subclasses to exit code 3 and InputError subclasses to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

// Weighted cross-covariance has rank < 2; the rotation is not unique.
class DegenerateCorrespondences : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Two squared singular values are closer than the gradient threshold.
class NearDegenerateSpectrum : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// All points coincide (no spread to normalize by or to run PCA on).
class DegenerateGeometry : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class CentroidCoincidence : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ParallelReference : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NonFiniteValue : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class GoalContextMismatch : public InputError {
 public:
  using InputError::InputError;
};

class LengthMismatch : public InputError {
 public:
  using InputError::InputError;
};

class UnknownGoal : public InputError {
 public:
  using InputError::InputError;
};

class FormatError : public InputError {
 public:
  using InputError::InputError;
};

}  // namespace taxpose
