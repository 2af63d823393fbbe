#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "libra/tensor.hpp"

namespace libra {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;  // elements compared (skipped ones excluded)
};

using ScalarFunction = std::function<double(const Tensor&)>;
using SkipPredicate = std::function<bool(std::size_t index)>;

/// Compares `analytic` (d f / d t, same size as t) against central differences
/// with step h:  max_i |analytic_i - fd_i| / max(1, |fd_i|).
/// Elements for which `skip(i)` holds are not compared. Throws NumericError
/// when f evaluates to a non-finite value, std::invalid_argument on h <= 0.
GradCheckResult finite_diff_check(const ScalarFunction& f, const Tensor& t,
                                  std::span<const double> analytic, double h,
                                  const SkipPredicate& skip = {});

/// Central-difference gradient of f at t.
Tensor numeric_gradient(const ScalarFunction& f, const Tensor& t, double h);

}  // namespace libra
