#pragma once

#include <stdexcept>
#include <string>

namespace spikelab {

// Bad input to an operation (exit code 2 at the CLI).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Operation called in the wrong angle regime.
struct RegimeError : ParameterError {
  using ParameterError::ParameterError;
};

// Point outside the closure of a domain.
struct DomainError : ParameterError {
  using ParameterError::ParameterError;
};

// A documented precondition of a check was violated by the caller.
struct PreconditionViolation : ParameterError {
  using ParameterError::ParameterError;
};

// Solver or iteration failed (exit code 3).
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InsufficientDomain : NumericalFailure {
  using NumericalFailure::NumericalFailure;
};

// Newton collapsed onto u = 0.
struct TrivialBranch : NumericalFailure {
  using NumericalFailure::NumericalFailure;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ParameterError(what);
}

} // namespace spikelab
