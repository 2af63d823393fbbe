#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace libra {

/// b = exp(gamma/alpha) - 1, the unique b with alpha * ln(b + 1) = gamma.
/// Throws std::invalid_argument unless alpha > 0 and gamma > 0.
double solve_b(double alpha, double gamma);

/// Parameters of the balanced L1 loss. b and the outlier-branch constant are
/// derived at construction: b from alpha*ln(b+1) = gamma, the constant from
/// continuity of the loss at |x| = 1.
class BalancedL1Params {
 public:
  BalancedL1Params() : BalancedL1Params(0.5, 1.5) {}
  BalancedL1Params(double alpha, double gamma);

  double alpha() const { return alpha_; }
  double gamma() const { return gamma_; }
  double b() const { return b_; }
  double c_const() const { return c_const_; }

 private:
  double alpha_;
  double gamma_;
  double b_;
  double c_const_;
};

// The two branches, valid for any |x| so junction behaviour can be probed.
double balanced_l1_inlier(double abs_x, const BalancedL1Params& p);
double balanced_l1_outlier(double abs_x, const BalancedL1Params& p);
double balanced_l1_inlier_grad(double abs_x, const BalancedL1Params& p);
double balanced_l1_outlier_grad(double abs_x, const BalancedL1Params& p);

double balanced_l1(double x, const BalancedL1Params& p);
double balanced_l1_grad(double x, const BalancedL1Params& p);

/// Inflection fixed at 1.
double smooth_l1(double x);
double smooth_l1_grad(double x);

using Vec4 = std::array<double, 4>;  // (x, y, w, h) regression offsets

struct LocalizationLoss {
  double value = 0.0;
  Vec4 grad{};  // d value / d prediction
};

LocalizationLoss localization_loss(const Vec4& prediction, const Vec4& target,
                                   const BalancedL1Params& p);

struct DetectionTarget {
  std::size_t label = 0;  // 0 is background
  Vec4 target{};
  Vec4 prediction{};
  std::vector<double> class_scores;  // probabilities, indexed by class
};

inline constexpr double kLogProbabilityFloor = 1e-12;

struct MultiTaskLoss {
  double value = 0.0;
  double classification = 0.0;
  double localization = 0.0;  // unweighted, 0 for background
  Vec4 grad_prediction{};
  std::vector<double> grad_scores;
};

/// -ln(max(p_u, 1e-12)) + lambda * [u >= 1] * L_loc(t^u, v).
MultiTaskLoss multi_task_loss(const DetectionTarget& target, double lambda,
                              const BalancedL1Params& p);

enum class SampleKind { inlier, outlier };

/// Outlier iff loss >= 1.
SampleKind classify_sample(double loss);

}  // namespace libra
