#pragma once

#include <stdexcept>
#include <string>

namespace adplan {

/// Raised when caller-supplied data violates a documented precondition.
class InvalidInput : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Base class for failures of a numerical kernel on otherwise valid input.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class NotPositiveDefinite : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class SingularSystem : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class ParameterSearchError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace adplan
