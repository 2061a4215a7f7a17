#pragma once

#include <stdexcept>
#include <string>

namespace manifold_forge {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Shapes of two operands do not compose.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// A factorization failed (Cholesky, local Gram solve) even after regularization.
class SingularityError : public Error {
public:
  using Error::Error;
};

/// NaN or Inf where a finite value is required.
class NumericalError : public Error {
public:
  using Error::Error;
};

/// Argument outside the documented domain (tau >= 1, alpha <= 0, ...).
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// Too few points for a loss or evaluation to be defined.
class DegenerateBatchError : public Error {
public:
  using Error::Error;
};

/// A pair weighting was requested for a loss that has no pairwise form.
class UnsupportedDecomposition : public Error {
public:
  using Error::Error;
};

/// Malformed input file; the message carries the line number.
class ParseError : public Error {
public:
  using Error::Error;
};

/// Experiment configuration rejected before any compute.
class ConfigError : public Error {
public:
  using Error::Error;
};

} // namespace manifold_forge
