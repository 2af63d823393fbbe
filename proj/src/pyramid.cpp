#include "libra/pyramid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "libra/rng.hpp"

namespace libra {

void PyramidLevels::validate() const {
  if (levels.empty()) throw std::invalid_argument("PyramidLevels: no levels");
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const Tensor& t = levels[l];
    if (t.rank() != 3) {
      throw std::invalid_argument("PyramidLevels: level " + std::to_string(l) +
                                  " is not [C,H,W]: " + shape_string(t.shape()));
    }
    if (t.extent(0) != levels.front().extent(0)) {
      throw std::invalid_argument("PyramidLevels: level " + std::to_string(l) +
                                  " has a different channel count");
    }
    if (l > 0) {
      const Tensor& prev = levels[l - 1];
      if (!(t.extent(1) < prev.extent(1) && t.extent(2) < prev.extent(2))) {
        throw std::invalid_argument("PyramidLevels: level " + std::to_string(l) +
                                    " does not shrink spatially");
      }
    }
  }
}

void NonLocalWeights::validate(std::size_t channels) const {
  const std::size_t E = theta.rank() == 2 ? theta.extent(0) : 0;
  const Shape in{E, channels};
  if (E == 0 || theta.shape() != in || phi.shape() != in || g.shape() != in ||
      w_z.shape() != Shape{channels, E}) {
    throw std::invalid_argument("NonLocalWeights: projections do not conform to " +
                                std::to_string(channels) + " channels");
  }
}

NonLocalWeights NonLocalWeights::random(std::size_t channels, std::size_t embed_channels,
                                        std::uint64_t seed) {
  if (channels == 0) throw std::invalid_argument("NonLocalWeights::random: zero channels");
  const std::size_t E = embed_channels ? embed_channels : std::max<std::size_t>(1, channels / 2);
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
  Rng rng(seed);
  auto draw = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = scale * rng.normal();
    return t;
  };
  NonLocalWeights w{draw({E, channels}), draw({E, channels}), draw({E, channels}),
                    draw({channels, E})};
  return w;
}

std::size_t default_target_level(std::size_t num_levels) {
  return num_levels >= 2 ? num_levels - 2 : 0;
}

namespace {

void check_target(const PyramidLevels& levels, std::size_t target_level) {
  levels.validate();
  if (target_level >= levels.size()) {
    throw std::invalid_argument("target level " + std::to_string(target_level) +
                                " outside pyramid of " + std::to_string(levels.size()) +
                                " levels");
  }
}

// Intermediate products of the non-local block, kept for the reverse pass.
struct NonLocalTrace {
  Tensor x_flat;    // [C,n]
  Tensor theta_x;   // [E,n]
  Tensor phi_x;     // [E,n]
  Tensor g_x;       // [E,n]
  Tensor theta_xt;  // [n,E]
  Tensor attention; // [n,n]
  Tensor attention_t;
  Tensor y;         // [E,n]
  Tensor out;       // [C,H,W]
};

NonLocalTrace trace_nonlocal(const Tensor& x, const NonLocalWeights& w) {
  if (x.rank() != 3) throw std::invalid_argument("refine_nonlocal: expected [C,H,W] input");
  w.validate(x.extent(0));
  NonLocalTrace tr;
  const std::size_t n = x.extent(1) * x.extent(2);
  tr.x_flat = x.reshaped({x.extent(0), n});
  tr.theta_x = matmul(w.theta, tr.x_flat);
  tr.phi_x = matmul(w.phi, tr.x_flat);
  tr.g_x = matmul(w.g, tr.x_flat);
  tr.theta_xt = transpose(tr.theta_x);
  tr.attention = softmax_rows(matmul(tr.theta_xt, tr.phi_x));
  tr.attention_t = transpose(tr.attention);
  tr.y = matmul(tr.g_x, tr.attention_t);
  tr.out = add(matmul(w.w_z, tr.y), tr.x_flat).reshaped(x.shape());
  return tr;
}

}  // namespace

std::vector<Tensor> rescale_to(const PyramidLevels& levels, std::size_t target_level) {
  check_target(levels, target_level);
  const Extent2 target = spatial_extent(levels.levels[target_level]);
  std::vector<Tensor> out;
  out.reserve(levels.size());
  for (const auto& level : levels.levels) out.push_back(resample(level, target));
  return out;
}

Tensor integrate(std::span<const Tensor> rescaled) { return mean_stack(rescaled); }

Tensor refine_nonlocal(const Tensor& x, const NonLocalWeights& w) {
  return trace_nonlocal(x, w).out;
}

Tensor nonlocal_attention(const Tensor& x, const NonLocalWeights& w) {
  return trace_nonlocal(x, w).attention;
}

NonLocalGrads refine_nonlocal_backward(const Tensor& x, const NonLocalWeights& w,
                                       const Tensor& grad_out) {
  const NonLocalTrace tr = trace_nonlocal(x, w);
  if (grad_out.shape() != x.shape()) {
    throw std::invalid_argument("refine_nonlocal_backward: gradient shape mismatch");
  }
  const Tensor g_flat = grad_out.reshaped(tr.x_flat.shape());

  auto [d_wz, d_y] = matmul_backward(w.w_z, tr.y, g_flat);
  auto [d_gx, d_att_t] = matmul_backward(tr.g_x, tr.attention_t, d_y);
  const Tensor d_logits = softmax_rows_backward(tr.attention, transpose(d_att_t));
  auto [d_theta_xt, d_phi_x] = matmul_backward(tr.theta_xt, tr.phi_x, d_logits);
  const Tensor d_theta_x = transpose(d_theta_xt);

  auto [d_theta, dx_theta] = matmul_backward(w.theta, tr.x_flat, d_theta_x);
  auto [d_phi, dx_phi] = matmul_backward(w.phi, tr.x_flat, d_phi_x);
  auto [d_g, dx_g] = matmul_backward(w.g, tr.x_flat, d_gx);

  Tensor dx = add(add(g_flat, dx_theta), add(dx_phi, dx_g));
  return {dx.reshaped(x.shape()), std::move(d_theta), std::move(d_phi), std::move(d_g),
          std::move(d_wz)};
}

PyramidLevels strengthen(const PyramidLevels& levels, const Tensor& refined,
                         std::size_t target_level) {
  check_target(levels, target_level);
  if (refined.shape() != levels.levels[target_level].shape()) {
    throw std::invalid_argument("strengthen: refined feature " + shape_string(refined.shape()) +
                                " is not at the target resolution");
  }
  PyramidLevels out;
  out.levels.reserve(levels.size());
  for (const auto& level : levels.levels) {
    out.levels.push_back(add(level, resample(refined, spatial_extent(level))));
  }
  return out;
}

PyramidLevels balanced_feature_pyramid(const PyramidLevels& levels,
                                       const NonLocalWeights* weights,
                                       std::size_t target_level) {
  const std::vector<Tensor> rescaled = rescale_to(levels, target_level);
  Tensor integrated = integrate(rescaled);
  const Tensor refined = weights ? refine_nonlocal(integrated, *weights) : integrated;
  PyramidLevels out = strengthen(levels, refined, target_level);
  out.integrated = std::move(integrated);
  return out;
}

void balanced_feature_pyramid_backward(PyramidLevels& levels, NonLocalWeights* weights,
                                       std::size_t target_level,
                                       std::span<const Tensor> grad_outputs) {
  check_target(levels, target_level);
  if (grad_outputs.size() != levels.size()) {
    throw std::invalid_argument("balanced_feature_pyramid_backward: expected " +
                                std::to_string(levels.size()) + " output gradients");
  }
  const std::vector<Tensor> rescaled = rescale_to(levels, target_level);
  const Tensor integrated = integrate(rescaled);
  const Tensor refined = weights ? refine_nonlocal(integrated, *weights) : integrated;

  // Strengthen: each output gradient reaches its own level directly and the
  // refined feature through the reverse resampling.
  Tensor d_refined(refined.shape());
  for (std::size_t l = 0; l < levels.size(); ++l) {
    if (grad_outputs[l].shape() != levels.levels[l].shape()) {
      throw std::invalid_argument("balanced_feature_pyramid_backward: gradient for level " +
                                  std::to_string(l) + " has the wrong shape");
    }
    levels.levels[l].accumulate_grad(grad_outputs[l].data());
    d_refined = add(d_refined, resample_backward(refined, grad_outputs[l]));
  }

  Tensor d_integrated = d_refined;
  if (weights) {
    NonLocalGrads g = refine_nonlocal_backward(integrated, *weights, d_refined);
    weights->theta.accumulate_grad(g.theta.data());
    weights->phi.accumulate_grad(g.phi.data());
    weights->g.accumulate_grad(g.g.data());
    weights->w_z.accumulate_grad(g.w_z.data());
    d_integrated = std::move(g.input);
  }

  const std::vector<Tensor> d_rescaled = mean_stack_backward(d_integrated, levels.size());
  for (std::size_t l = 0; l < levels.size(); ++l) {
    levels.levels[l].accumulate_grad(resample_backward(levels.levels[l], d_rescaled[l]).data());
  }
}

PyramidLevels make_synthetic_pyramid(std::size_t num_levels, std::size_t base_resolution,
                                     std::size_t channels, std::uint64_t seed) {
  if (num_levels == 0 || base_resolution == 0 || channels == 0) {
    throw std::invalid_argument("make_synthetic_pyramid: levels, resolution and channels must be positive");
  }
  Rng rng(seed);
  PyramidLevels out;
  std::size_t side = base_resolution;
  for (std::size_t l = 0; l < num_levels; ++l) {
    Tensor level({channels, side, side});
    for (auto& v : level.data()) v = rng.normal();
    out.levels.push_back(std::move(level));
    side = (side + 1) / 2;
  }
  out.validate();
  return out;
}

LevelStats level_stats(const Tensor& t) {
  LevelStats s;
  for (double v : t.data()) s.mean += v;
  s.mean /= static_cast<double>(t.size());
  for (double v : t.data()) s.variance += (v - s.mean) * (v - s.mean);
  s.variance /= static_cast<double>(t.size());
  return s;
}

}  // namespace libra
