#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "libra/tensor.hpp"

namespace libra {

/// Multi-resolution feature stack, finest level first. Every level is
/// [C,H_l,W_l] with a shared C and strictly shrinking spatial extent.
struct PyramidLevels {
  std::vector<Tensor> levels;
  std::optional<Tensor> integrated;  // level average at the intermediate resolution

  void validate() const;
  std::size_t size() const { return levels.size(); }
  std::size_t channels() const { return levels.front().extent(0); }
};

/// 1x1 projections of the embedded-Gaussian non-local block:
/// theta, phi, g are [E,C]; w_z is [C,E].
struct NonLocalWeights {
  Tensor theta;
  Tensor phi;
  Tensor g;
  Tensor w_z;

  std::size_t embed_channels() const { return theta.extent(0); }
  void validate(std::size_t channels) const;

  /// Normal entries scaled by 1/sqrt(channels). embed_channels 0 picks
  /// max(1, channels / 2).
  static NonLocalWeights random(std::size_t channels, std::size_t embed_channels,
                                std::uint64_t seed);
};

/// Second-coarsest level (or the only one).
std::size_t default_target_level(std::size_t num_levels);

/// Levels finer than the target are max-pooled down, coarser ones are
/// nearest-upsampled, the target passes through.
std::vector<Tensor> rescale_to(const PyramidLevels& levels, std::size_t target_level);

/// Parameter-free elementwise mean over the rescaled levels.
Tensor integrate(std::span<const Tensor> rescaled);

/// out = w_z * (softmax_rows(theta(x)^T phi(x)) applied to g(x)) + x, with the
/// spatial positions of x flattened into the attention axis.
Tensor refine_nonlocal(const Tensor& x, const NonLocalWeights& w);

/// Row-stochastic [n,n] attention matrix of the block, n = H*W.
Tensor nonlocal_attention(const Tensor& x, const NonLocalWeights& w);

struct NonLocalGrads {
  Tensor input;
  Tensor theta;
  Tensor phi;
  Tensor g;
  Tensor w_z;
};

NonLocalGrads refine_nonlocal_backward(const Tensor& x, const NonLocalWeights& w,
                                       const Tensor& grad_out);

/// P_l = C_l + resample(refined -> extent of level l).
PyramidLevels strengthen(const PyramidLevels& levels, const Tensor& refined,
                         std::size_t target_level);

/// rescale -> integrate -> refine (skipped when `weights` is null) -> strengthen.
PyramidLevels balanced_feature_pyramid(const PyramidLevels& levels,
                                       const NonLocalWeights* weights,
                                       std::size_t target_level);

/// Reverse pass of balanced_feature_pyramid. `grad_outputs[l]` is the
/// gradient with respect to output level l; gradients are accumulated into
/// the grad buffers of `levels.levels[l]` and of each weight tensor.
void balanced_feature_pyramid_backward(PyramidLevels& levels, NonLocalWeights* weights,
                                       std::size_t target_level,
                                       std::span<const Tensor> grad_outputs);

/// Random-normal pyramid with spatial sizes base, ceil(base/2), ...
PyramidLevels make_synthetic_pyramid(std::size_t num_levels, std::size_t base_resolution,
                                     std::size_t channels, std::uint64_t seed);

struct LevelStats {
  double mean = 0.0;
  double variance = 0.0;  // population variance
};

LevelStats level_stats(const Tensor& t);

}  // namespace libra
