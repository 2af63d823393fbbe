#include "libra/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "libra/error.hpp"

namespace libra {

namespace {

double eval_finite(const ScalarFunction& f, const Tensor& t) {
  const double v = f(t);
  if (!std::isfinite(v)) {
    throw NumericError("finite_diff_check: function returned " + std::to_string(v));
  }
  return v;
}

double central_difference(const ScalarFunction& f, Tensor& probe, std::size_t i, double h) {
  const double x0 = probe[i];
  probe[i] = x0 + h;
  const double up = eval_finite(f, probe);
  probe[i] = x0 - h;
  const double down = eval_finite(f, probe);
  probe[i] = x0;
  return (up - down) / (2.0 * h);
}

}  // namespace

Tensor numeric_gradient(const ScalarFunction& f, const Tensor& t, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("numeric_gradient: step must be positive");
  Tensor probe = t;
  probe.clear_grad();
  Tensor grad(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) grad[i] = central_difference(f, probe, i, h);
  return grad;
}

GradCheckResult finite_diff_check(const ScalarFunction& f, const Tensor& t,
                                  std::span<const double> analytic, double h,
                                  const SkipPredicate& skip) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  if (analytic.size() != t.size()) {
    throw std::invalid_argument("finite_diff_check: analytic gradient has " +
                                std::to_string(analytic.size()) + " entries, tensor has " +
                                std::to_string(t.size()));
  }
  eval_finite(f, t);
  Tensor probe = t;
  probe.clear_grad();
  GradCheckResult result;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (skip && skip(i)) continue;
    const double fd = central_difference(f, probe, i, h);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
    ++result.checked;
    if (result.checked == 1 || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace libra
