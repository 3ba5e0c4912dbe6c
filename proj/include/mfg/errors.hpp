#pragma once

#include <stdexcept>
#include <string>

namespace mfg {

/// Caller violated a precondition (dimension mismatch, empty input, bad index).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An instance or derived object failed its construction-time checks.
class ConstructionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Constraint set is empty (projection target does not exist).
class InfeasibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Objective is unbounded below over the admissible set.
class UnboundednessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative routine failed to reach its tolerance.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, double last_residual)
      : std::runtime_error(what), residual_(last_residual) {}
  explicit NumericalError(const std::string& what) : NumericalError(what, 0.0) {}

  [[nodiscard]] double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// A rate study did not produce enough positive points to fit a slope.
class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mfg
