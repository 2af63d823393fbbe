#include "libra/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace libra {

double solve_b(double alpha, double gamma) {
  if (!(alpha > 0.0) || !(gamma > 0.0)) {
    throw std::invalid_argument("solve_b: alpha and gamma must be positive (got alpha=" +
                                std::to_string(alpha) + ", gamma=" + std::to_string(gamma) + ")");
  }
  return std::expm1(gamma / alpha);
}

BalancedL1Params::BalancedL1Params(double alpha, double gamma)
    : alpha_(alpha), gamma_(gamma), b_(solve_b(alpha, gamma)), c_const_(0.0) {
  c_const_ = balanced_l1_inlier(1.0, *this) - gamma_;
}

double balanced_l1_inlier(double abs_x, const BalancedL1Params& p) {
  const double bx = p.b() * abs_x;
  return p.alpha() / p.b() * (bx + 1.0) * std::log1p(bx) - p.alpha() * abs_x;
}

double balanced_l1_outlier(double abs_x, const BalancedL1Params& p) {
  return p.gamma() * abs_x + p.c_const();
}

double balanced_l1_inlier_grad(double abs_x, const BalancedL1Params& p) {
  return p.alpha() * std::log1p(p.b() * abs_x);
}

double balanced_l1_outlier_grad(double, const BalancedL1Params& p) { return p.gamma(); }

double balanced_l1(double x, const BalancedL1Params& p) {
  const double a = std::abs(x);
  return a < 1.0 ? balanced_l1_inlier(a, p) : balanced_l1_outlier(a, p);
}

double balanced_l1_grad(double x, const BalancedL1Params& p) {
  if (x == 0.0) return 0.0;
  const double a = std::abs(x);
  const double mag = a < 1.0 ? balanced_l1_inlier_grad(a, p) : balanced_l1_outlier_grad(a, p);
  return std::copysign(mag, x);
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (std::abs(x) < 1.0) return x;
  return x > 0.0 ? 1.0 : -1.0;
}

LocalizationLoss localization_loss(const Vec4& prediction, const Vec4& target,
                                   const BalancedL1Params& p) {
  LocalizationLoss out;
  for (std::size_t i = 0; i < 4; ++i) {
    const double d = prediction[i] - target[i];
    out.value += balanced_l1(d, p);
    out.grad[i] = balanced_l1_grad(d, p);
  }
  return out;
}

MultiTaskLoss multi_task_loss(const DetectionTarget& target, double lambda,
                              const BalancedL1Params& p) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("multi_task_loss: lambda must be >= 0");
  if (target.label >= target.class_scores.size()) {
    throw std::invalid_argument("multi_task_loss: label " + std::to_string(target.label) +
                                " outside " + std::to_string(target.class_scores.size()) +
                                " class scores");
  }
  MultiTaskLoss out;
  out.grad_scores.assign(target.class_scores.size(), 0.0);
  const double pu = target.class_scores[target.label];
  if (pu > kLogProbabilityFloor) {
    out.classification = -std::log(pu);
    out.grad_scores[target.label] = -1.0 / pu;
  } else {
    out.classification = -std::log(kLogProbabilityFloor);
  }
  if (target.label >= 1) {
    const LocalizationLoss loc = localization_loss(target.prediction, target.target, p);
    out.localization = loc.value;
    for (std::size_t i = 0; i < 4; ++i) out.grad_prediction[i] = lambda * loc.grad[i];
  }
  out.value = out.classification + lambda * out.localization;
  return out;
}

SampleKind classify_sample(double loss) {
  return loss >= 1.0 ? SampleKind::outlier : SampleKind::inlier;
}

}  // namespace libra
