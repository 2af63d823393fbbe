#pragma once

// Serial, definition-level versions of the OpenMP kernels. Tests compare the
// parallel kernels against these; the benchmark target times both.

#include <cstdint>
#include <span>
#include <vector>

#include "libra/boxes.hpp"
#include "libra/sampler.hpp"
#include "libra/tensor.hpp"

namespace libra::reference {

Tensor resize_nearest(const Tensor& t, Extent2 target);
Tensor maxpool_to(const Tensor& t, Extent2 target);
Tensor mean_stack(std::span<const Tensor> ts);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& t);
Tensor conv1x1(const Tensor& weight, const Tensor& x);

/// One trial at a time on the calling thread; same per-trial seeds as
/// libra::selection_counts.
std::vector<std::uint64_t> selection_counts(std::span<const Candidate> pool,
                                            const SamplerConfig& cfg,
                                            SamplingStrategy strategy,
                                            std::uint64_t trials);

}  // namespace libra::reference
