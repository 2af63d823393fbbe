#include <cmath>
#include <stdexcept>

#include "libra/reference.hpp"

namespace libra::reference {

Tensor resize_nearest(const Tensor& t, Extent2 target) {
  if (target.height == 0 || target.width == 0) {
    throw std::invalid_argument("reference::resize_nearest: empty target");
  }
  const std::size_t C = t.extent(0), H = t.extent(1), W = t.extent(2);
  Tensor out({C, target.height, target.width});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < target.height; ++i)
      for (std::size_t j = 0; j < target.width; ++j) {
        const auto si = static_cast<std::size_t>(
            std::floor(static_cast<double>(i) * H / target.height));
        const auto sj = static_cast<std::size_t>(
            std::floor(static_cast<double>(j) * W / target.width));
        out.at(c, i, j) = t.at(c, si, sj);
      }
  return out;
}

Tensor maxpool_to(const Tensor& t, Extent2 target) {
  const std::size_t C = t.extent(0), H = t.extent(1), W = t.extent(2);
  if (H % target.height || W % target.width) {
    throw std::invalid_argument("reference::maxpool_to: non-divisible target");
  }
  const std::size_t kh = H / target.height, kw = W / target.width;
  Tensor out({C, target.height, target.width});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < target.height; ++i)
      for (std::size_t j = 0; j < target.width; ++j) {
        double best = -INFINITY;
        for (std::size_t di = 0; di < kh; ++di)
          for (std::size_t dj = 0; dj < kw; ++dj)
            best = std::fmax(best, t.at(c, i * kh + di, j * kw + dj));
        out.at(c, i, j) = best;
      }
  return out;
}

Tensor mean_stack(std::span<const Tensor> ts) {
  if (ts.empty()) throw std::invalid_argument("reference::mean_stack: empty list");
  Tensor out(ts.front().shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (const auto& t : ts) acc += t[i];
    out[i] = acc / static_cast<double>(ts.size());
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t M = a.extent(0), K = a.extent(1), N = b.extent(1);
  if (b.extent(0) != K) throw std::invalid_argument("reference::matmul: shape mismatch");
  Tensor out({M, N});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += a[i * K + k] * b[k * N + j];
      out[i * N + j] = acc;
    }
  return out;
}

Tensor softmax_rows(const Tensor& t) {
  const std::size_t cols = t.shape().back();
  Tensor out(t.shape());
  for (std::size_t base = 0; base < t.size(); base += cols) {
    double peak = -INFINITY;
    for (std::size_t j = 0; j < cols; ++j) peak = std::fmax(peak, t[base + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += std::exp(t[base + j] - peak);
    for (std::size_t j = 0; j < cols; ++j) out[base + j] = std::exp(t[base + j] - peak) / total;
  }
  return out;
}

Tensor conv1x1(const Tensor& weight, const Tensor& x) {
  const std::size_t Co = weight.extent(0), Ci = weight.extent(1);
  const std::size_t H = x.extent(1), W = x.extent(2);
  if (x.extent(0) != Ci) throw std::invalid_argument("reference::conv1x1: channel mismatch");
  Tensor out({Co, H, W});
  for (std::size_t o = 0; o < Co; ++o)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < Ci; ++c) acc += weight[o * Ci + c] * x.at(c, i, j);
        out.at(o, i, j) = acc;
      }
  return out;
}

}  // namespace libra::reference
