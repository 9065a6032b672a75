#pragma once

#include <stdexcept>
#include <string>

namespace sqg {

/// Base class for every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An argument is outside its admissible range (alpha, delta, grid size, ...).
struct ParameterError : Error {
  using Error::Error;
};

/// Input data violates an operation's precondition (e.g. nonzero mean).
struct PreconditionError : Error {
  using Error::Error;
};

/// Malformed or inconsistent experiment configuration.
struct ConfigError : Error {
  using Error::Error;
};

/// Missing or corrupt on-disk data.
struct DataError : Error {
  using Error::Error;
};

/// Numerical blow-up during time integration.
struct BlowUpError : Error {
  BlowUpError(const std::string& what, double t, double max_coeff)
      : Error(what), time(t), max_abs_coeff(max_coeff) {}
  double time;
  double max_abs_coeff;
};

/// A cover or cutoff failed its certificate.
struct CertificationError : Error {
  using Error::Error;
};

/// Some sample point of the macro ball is not covered.
struct InvalidCoverError : CertificationError {
  InvalidCoverError(const std::string& what, double px, double py) : CertificationError(what), x1(px), x2(py) {}
  double x1;
  double x2;
};

}  // namespace sqg
