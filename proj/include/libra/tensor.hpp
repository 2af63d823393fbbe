#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace libra {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer of the
/// same shape. Extents are strictly positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // [C,H,W] element access.
  double at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  double& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  bool has_grad() const { return grad_.has_value(); }
  std::span<const double> grad() const;
  /// Allocates a zeroed gradient buffer if absent, then adds `g` into it.
  void accumulate_grad(std::span<const double> g);
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

struct Extent2 {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const Extent2&, const Extent2&) = default;
};

/// Spatial extent of a [C,H,W] tensor.
Extent2 spatial_extent(const Tensor& t);

// ---------------------------------------------------------------------------
// Forward operations and their reverse-mode rules. Every *_backward takes the
// upstream gradient (same shape as the forward output) and returns the
// gradient with respect to each differentiable input.
// ---------------------------------------------------------------------------

/// Nearest-neighbour resize: out[c,i,j] = in[c, i*H/H', j*W/W'].
Tensor resize_nearest(const Tensor& t, Extent2 target);
Tensor resize_nearest_backward(const Shape& input_shape, const Tensor& grad_out);

/// Max over integer (H/H')x(W/W') windows. Ties route to the first maximum in
/// row-major window order.
Tensor maxpool_to(const Tensor& t, Extent2 target);
Tensor maxpool_to_backward(const Tensor& input, const Tensor& grad_out);

/// Dispatches to maxpool_to (shrinking), resize_nearest (growing) or a copy.
Tensor resample(const Tensor& t, Extent2 target);
Tensor resample_backward(const Tensor& input, const Tensor& grad_out);

Tensor mean_stack(std::span<const Tensor> ts);
std::vector<Tensor> mean_stack_backward(const Tensor& grad_out, std::size_t count);

Tensor add(const Tensor& a, const Tensor& b);

/// 2-D matrix product.
Tensor matmul(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> matmul_backward(const Tensor& a, const Tensor& b,
                                          const Tensor& grad_out);

Tensor transpose(const Tensor& a);

/// Softmax over the last axis.
Tensor softmax_rows(const Tensor& t);
Tensor softmax_rows_backward(const Tensor& out, const Tensor& grad_out);

/// Per-pixel channel mixing: weight [Cout,Cin] applied to x [Cin,H,W].
Tensor conv1x1(const Tensor& weight, const Tensor& x);
std::pair<Tensor, Tensor> conv1x1_backward(const Tensor& weight, const Tensor& x,
                                           const Tensor& grad_out);

// Flat binary dump: u64 LE rank, u64 LE extents, raw f64 LE values.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

}  // namespace libra
