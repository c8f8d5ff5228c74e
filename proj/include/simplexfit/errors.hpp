#ifndef SIMPLEXFIT_ERRORS_HPP
#define SIMPLEXFIT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace simplexfit {

// Argument outside the mathematical domain of an operation (y outside (0,1),
// log of a non-positive value, ...).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed formula text. `position` is the 0-based byte offset of the
// offending token.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " (at position " + std::to_string(position) + ")"),
        position(position) {}
  std::size_t position;
};

// Bad run configuration (unknown link name, missing field, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Bad input data (unreadable file, response out of range, missing value, ...).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Estimation failure that is not a numerical degeneracy (non-convergence,
// starting values unavailable, refusing to run on a non-converged fit).
class FitError : public std::runtime_error {
 public:
  explicit FitError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical degeneracy: singular information, ill-conditioned Hessian,
// invalid model state at given parameters.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace simplexfit

#endif
