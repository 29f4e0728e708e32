#pragma once

#include <stdexcept>
#include <string>

namespace percsens {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad schema, unknown names, shape mismatches, violated
/// preconditions. The CLI maps these to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A computation could not produce a meaningful result (failed factorization,
/// degenerate column, non-convergence).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// The requested quantity needs a capability the model does not have.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

}  // namespace percsens
