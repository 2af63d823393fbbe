#include "libra/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace libra {

namespace {

// Below this many output elements the OpenMP fork costs more than the loop.
constexpr std::size_t kParallelThreshold = 1 << 14;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_chw(const Tensor& t, const char* op) {
  require(t.rank() == 3, std::string(op) + ": expected [C,H,W] tensor, got " +
                             shape_string(t.shape()));
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected 2-D tensor, got " +
                             shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  require(!shape_.empty(), "Tensor: rank must be at least 1");
  for (auto e : shape_) require(e > 0, "Tensor: extents must be positive");
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  require(!shape_.empty(), "Tensor: rank must be at least 1");
  for (auto e : shape_) require(e > 0, "Tensor: extents must be positive");
  require(shape_size(shape_) == data_.size(),
          "Tensor: " + std::to_string(data_.size()) +
              " values do not fill shape " + shape_string(shape_));
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw std::logic_error("Tensor::grad: no gradient buffer");
  return *grad_;
}

void Tensor::accumulate_grad(std::span<const double> g) {
  require(g.size() == data_.size(), "Tensor::accumulate_grad: size mismatch");
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) (*grad_)[i] += g[i];
}

void Tensor::zero_grad() { grad_.emplace(data_.size(), 0.0); }

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_size(shape) == data_.size(),
          "Tensor::reshaped: cannot view " + shape_string(shape_) + " as " +
              shape_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Extent2 spatial_extent(const Tensor& t) {
  require_chw(t, "spatial_extent");
  return {t.extent(1), t.extent(2)};
}

Tensor resize_nearest(const Tensor& t, Extent2 target) {
  require_chw(t, "resize_nearest");
  require(target.height >= 1 && target.width >= 1,
          "resize_nearest: empty target extent");
  const std::size_t C = t.extent(0), H = t.extent(1), W = t.extent(2);
  Tensor out({C, target.height, target.width});
  const auto rows = static_cast<std::ptrdiff_t>(C * target.height);
#pragma omp parallel for if (out.size() > kParallelThreshold)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::size_t c = static_cast<std::size_t>(r) / target.height;
    const std::size_t i = static_cast<std::size_t>(r) % target.height;
    const std::size_t si = i * H / target.height;
    for (std::size_t j = 0; j < target.width; ++j) {
      out.at(c, i, j) = t.at(c, si, j * W / target.width);
    }
  }
  return out;
}

Tensor resize_nearest_backward(const Shape& input_shape, const Tensor& grad_out) {
  require(input_shape.size() == 3, "resize_nearest_backward: expected [C,H,W]");
  require_chw(grad_out, "resize_nearest_backward");
  require(input_shape[0] == grad_out.extent(0),
          "resize_nearest_backward: channel mismatch");
  const std::size_t C = input_shape[0], H = input_shape[1], W = input_shape[2];
  const std::size_t Ho = grad_out.extent(1), Wo = grad_out.extent(2);
  Tensor grad(input_shape);
  // Channels are independent, so scatter-adds never collide across threads.
#pragma omp parallel for if (grad_out.size() > kParallelThreshold)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(C); ++c) {
    const auto cc = static_cast<std::size_t>(c);
    for (std::size_t i = 0; i < Ho; ++i) {
      const std::size_t si = i * H / Ho;
      for (std::size_t j = 0; j < Wo; ++j) {
        grad.at(cc, si, j * W / Wo) += grad_out.at(cc, i, j);
      }
    }
  }
  return grad;
}

namespace {

struct PoolWindow {
  std::size_t kh;
  std::size_t kw;
};

PoolWindow pool_window(const Tensor& t, Extent2 target, const char* op) {
  require_chw(t, op);
  require(target.height >= 1 && target.width >= 1,
          std::string(op) + ": empty target extent");
  const std::size_t H = t.extent(1), W = t.extent(2);
  require(H % target.height == 0 && W % target.width == 0,
          std::string(op) + ": " + std::to_string(H) + "x" + std::to_string(W) +
              " is not divisible into " + std::to_string(target.height) + "x" +
              std::to_string(target.width) + " windows");
  return {H / target.height, W / target.width};
}

// Row-major first argmax inside window (oi, oj) of channel c.
std::pair<std::size_t, std::size_t> window_argmax(const Tensor& t, std::size_t c,
                                                  std::size_t oi, std::size_t oj,
                                                  PoolWindow win) {
  std::size_t bi = oi * win.kh, bj = oj * win.kw;
  double best = t.at(c, bi, bj);
  for (std::size_t di = 0; di < win.kh; ++di) {
    for (std::size_t dj = 0; dj < win.kw; ++dj) {
      const std::size_t i = oi * win.kh + di, j = oj * win.kw + dj;
      if (t.at(c, i, j) > best) {
        best = t.at(c, i, j);
        bi = i;
        bj = j;
      }
    }
  }
  return {bi, bj};
}

}  // namespace

Tensor maxpool_to(const Tensor& t, Extent2 target) {
  const PoolWindow win = pool_window(t, target, "maxpool_to");
  const std::size_t C = t.extent(0);
  Tensor out({C, target.height, target.width});
  const auto rows = static_cast<std::ptrdiff_t>(C * target.height);
#pragma omp parallel for if (t.size() > kParallelThreshold)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::size_t c = static_cast<std::size_t>(r) / target.height;
    const std::size_t i = static_cast<std::size_t>(r) % target.height;
    for (std::size_t j = 0; j < target.width; ++j) {
      const auto [ai, aj] = window_argmax(t, c, i, j, win);
      out.at(c, i, j) = t.at(c, ai, aj);
    }
  }
  return out;
}

Tensor maxpool_to_backward(const Tensor& input, const Tensor& grad_out) {
  const PoolWindow win = pool_window(input, spatial_extent(grad_out), "maxpool_to_backward");
  require(input.extent(0) == grad_out.extent(0), "maxpool_to_backward: channel mismatch");
  Tensor grad(input.shape());
  const std::size_t C = input.extent(0), Ho = grad_out.extent(1), Wo = grad_out.extent(2);
  const auto rows = static_cast<std::ptrdiff_t>(C * Ho);
  // Windows are disjoint, so each input cell is written by at most one row.
#pragma omp parallel for if (input.size() > kParallelThreshold)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::size_t c = static_cast<std::size_t>(r) / Ho;
    const std::size_t i = static_cast<std::size_t>(r) % Ho;
    for (std::size_t j = 0; j < Wo; ++j) {
      const auto [ai, aj] = window_argmax(input, c, i, j, win);
      grad.at(c, ai, aj) += grad_out.at(c, i, j);
    }
  }
  return grad;
}

Tensor resample(const Tensor& t, Extent2 target) {
  const Extent2 src = spatial_extent(t);
  if (src == target) return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
  if (target.height <= src.height && target.width <= src.width) return maxpool_to(t, target);
  if (target.height >= src.height && target.width >= src.width) return resize_nearest(t, target);
  throw std::invalid_argument("resample: mixed up/down scaling " + shape_string(t.shape()) +
                              " -> " + std::to_string(target.height) + "x" +
                              std::to_string(target.width));
}

Tensor resample_backward(const Tensor& input, const Tensor& grad_out) {
  const Extent2 src = spatial_extent(input);
  const Extent2 dst = spatial_extent(grad_out);
  if (src == dst) return Tensor(grad_out.shape(), std::vector<double>(grad_out.data().begin(), grad_out.data().end()));
  if (dst.height <= src.height && dst.width <= src.width) return maxpool_to_backward(input, grad_out);
  return resize_nearest_backward(input.shape(), grad_out);
}

Tensor mean_stack(std::span<const Tensor> ts) {
  require(!ts.empty(), "mean_stack: empty list");
  for (const auto& t : ts) require_same_shape(ts.front(), t, "mean_stack");
  Tensor out(ts.front().shape());
  const auto n = static_cast<std::ptrdiff_t>(out.size());
  const double count = static_cast<double>(ts.size());
#pragma omp parallel for if (out.size() > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    // Deviations from the first entry, so equal inputs average to themselves.
    const auto k = static_cast<std::size_t>(i);
    const double base = ts.front()[k];
    double acc = 0.0;
    for (const auto& t : ts) acc += t[k] - base;
    out[k] = base + acc / count;
  }
  return out;
}

std::vector<Tensor> mean_stack_backward(const Tensor& grad_out, std::size_t count) {
  require(count > 0, "mean_stack_backward: empty list");
  Tensor share(grad_out.shape());
  for (std::size_t i = 0; i < share.size(); ++i) {
    share[i] = grad_out[i] / static_cast<double>(count);
  }
  return std::vector<Tensor>(count, share);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for if (out.size() > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = a[k] + b[k];
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t M = a.extent(0), K = a.extent(1), N = b.extent(1);
  require(b.extent(0) == K, "matmul: inner extents differ " + shape_string(a.shape()) +
                                " x " + shape_string(b.shape()));
  Tensor out({M, N});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
#pragma omp parallel for if (M * N * K > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(M); ++i) {
    double* row = po + static_cast<std::size_t>(i) * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = pa[static_cast<std::size_t>(i) * K + k];
      const double* brow = pb + k * N;
      for (std::size_t j = 0; j < N; ++j) row[j] += aik * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t R = a.extent(0), C = a.extent(1);
  Tensor out({C, R});
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = 0; j < C; ++j) out[j * R + i] = a[i * C + j];
  }
  return out;
}

std::pair<Tensor, Tensor> matmul_backward(const Tensor& a, const Tensor& b,
                                          const Tensor& grad_out) {
  require(grad_out.shape() == Shape{a.extent(0), b.extent(1)},
          "matmul_backward: gradient shape mismatch");
  return {matmul(grad_out, transpose(b)), matmul(transpose(a), grad_out)};
}

Tensor softmax_rows(const Tensor& t) {
  const std::size_t cols = t.shape().back();
  const std::size_t rows = t.size() / cols;
  Tensor out(t.shape());
#pragma omp parallel for if (t.size() > kParallelThreshold)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * cols;
    double peak = t[base];
    for (std::size_t j = 1; j < cols; ++j) peak = std::max(peak, t[base + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[base + j] = std::exp(t[base + j] - peak);
      total += out[base + j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[base + j] /= total;
  }
  return out;
}

Tensor softmax_rows_backward(const Tensor& out, const Tensor& grad_out) {
  require_same_shape(out, grad_out, "softmax_rows_backward");
  const std::size_t cols = out.shape().back();
  const std::size_t rows = out.size() / cols;
  Tensor grad(out.shape());
#pragma omp parallel for if (out.size() > kParallelThreshold)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * cols;
    double inner = 0.0;
    for (std::size_t j = 0; j < cols; ++j) inner += grad_out[base + j] * out[base + j];
    for (std::size_t j = 0; j < cols; ++j) {
      grad[base + j] = out[base + j] * (grad_out[base + j] - inner);
    }
  }
  return grad;
}

Tensor conv1x1(const Tensor& weight, const Tensor& x) {
  require_matrix(weight, "conv1x1");
  require_chw(x, "conv1x1");
  require(weight.extent(1) == x.extent(0),
          "conv1x1: weight " + shape_string(weight.shape()) + " does not accept " +
              std::to_string(x.extent(0)) + " channels");
  const std::size_t H = x.extent(1), W = x.extent(2);
  return matmul(weight, x.reshaped({x.extent(0), H * W}))
      .reshaped({weight.extent(0), H, W});
}

std::pair<Tensor, Tensor> conv1x1_backward(const Tensor& weight, const Tensor& x,
                                           const Tensor& grad_out) {
  require_chw(grad_out, "conv1x1_backward");
  const std::size_t n = x.extent(1) * x.extent(2);
  const Tensor flat_x = x.reshaped({x.extent(0), n});
  const Tensor flat_g = grad_out.reshaped({grad_out.extent(0), n});
  auto [dw, dx] = matmul_backward(weight, flat_x, flat_g);
  return {std::move(dw), dx.reshaped(x.shape())};
}

namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) {
    throw std::runtime_error("read_tensor: truncated stream");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  put_u64(os, t.rank());
  for (auto e : t.shape()) put_u64(os, e);
  for (double v : t.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
}

Tensor read_tensor(std::istream& is) {
  const std::uint64_t rank = get_u64(is);
  if (rank == 0 || rank > 16) throw std::runtime_error("read_tensor: implausible rank");
  Shape shape(rank);
  for (auto& e : shape) e = get_u64(is);
  std::vector<double> values(shape_size(shape));
  for (auto& v : values) v = std::bit_cast<double>(get_u64(is));
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace libra
