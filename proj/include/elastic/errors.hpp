#pragma once

#include <stdexcept>
#include <string>

namespace elastic {

/// Input violates a documented precondition (bad curve, infeasible warp, ...).
class ValidationError : public std::invalid_argument {
public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Least-squares design without full rank and no ridge to stabilise it.
class FitError : public std::runtime_error {
public:
  explicit FitError(const std::string& what) : std::runtime_error(what) {}
};

/// An iterative procedure ran out of its step budget.
class ConvergenceError : public std::runtime_error {
public:
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace elastic
