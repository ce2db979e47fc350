#ifndef BIVFA_ERRORS_HPP
#define BIVFA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace bivfa {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters, mismatched dimensions, malformed files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input vector contains NaN or infinity where a finite point is required.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The pair (lower nonsmooth kind, upper nonsmooth kind) has no registered
/// closed-form combined proximal map.
class UnsupportedInstance : public Error {
 public:
  using Error::Error;
};

/// Iterates became non-finite or backtracking ran away.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// A subsolver stopped at its iteration cap inside a loop that needs it
/// converged.
class NotConverged : public Error {
 public:
  using Error::Error;
};

/// A bound that holds under the standing assumptions was violated at run
/// time; usually means Delta1 or B_f is misconfigured.
class TheoryViolation : public Error {
 public:
  using Error::Error;
};

/// The reference oracle could not reach the requested accuracy.
class ReferenceUnavailable : public Error {
 public:
  using Error::Error;
};

}  // namespace bivfa

#endif  // BIVFA_ERRORS_HPP
