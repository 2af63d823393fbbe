#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "libra/boxes.hpp"

namespace libra {

/// Negatives at or above this IoU count as hard.
inline constexpr double kHardNegativeIoU = 0.05;

/// K equal-width IoU bins over [lo, hi). Values >= hi fall in the top bin,
/// values < lo in the bottom bin.
struct IoUBinning {
  std::size_t num_bins = 3;
  double lo = 0.0;
  double hi = 0.5;

  void validate() const;
  std::size_t bin_of(double iou) const;
  double lower_edge(std::size_t k) const;
  double upper_edge(std::size_t k) const;
};

struct SamplerConfig {
  std::size_t num_negatives = 384;
  std::size_t num_bins = 3;
  double bin_lo = 0.0;
  double bin_hi = 0.5;
  std::size_t num_positives = 128;
  std::uint64_t seed = 0;

  void validate() const;
  IoUBinning binning() const { return {num_bins, bin_lo, bin_hi}; }
};

/// Outcome of one sampling call.
///
/// For the negative samplers the bins are the IoU bins; for the positive
/// sampler they are ground-truth indices.
struct SampleReport {
  std::vector<std::size_t> selected;  // indices into the input list, ascending
  std::vector<std::size_t> bin_pool_counts;
  std::vector<std::size_t> bin_selected_counts;
  double hard_fraction = 0.0;  // selected with iou >= kHardNegativeIoU
};

/// Uniform sample without replacement of min(N, M) candidates labelled
/// negative. The report is binned with `binning` for histogramming only.
SampleReport sample_random(std::span<const Candidate> negatives, std::size_t num_negatives,
                           std::uint64_t seed, const IoUBinning& binning = {});

/// Per-bin quotas for the IoU-balanced sampler: floor(N/K) each, remainder
/// one apiece to the lowest bins, clipped to the bin populations, then any
/// shortfall handed out round-robin to bins that still have candidates.
/// The result sums to min(N, sum(pool_counts)).
std::vector<std::size_t> iou_balanced_quotas(std::span<const std::size_t> pool_counts,
                                             std::size_t num_negatives);

SampleReport sample_iou_balanced(std::span<const Candidate> negatives, const SamplerConfig& cfg);

/// Round-robin over ground truths (ascending index), one positive at a time,
/// until the budget is spent or every group is exhausted.
std::vector<std::size_t> positive_quotas(std::span<const std::size_t> group_sizes,
                                         std::size_t budget);

SampleReport sample_positive_balanced(std::span<const Candidate> positives,
                                      std::size_t num_positives, std::uint64_t seed);

enum class SamplingStrategy { random, iou_balanced };

/// Runs `trials` independent sampler calls (trial t uses derive_seed(cfg.seed, t))
/// and returns how often each pool entry was selected. Trials are spread over
/// OpenMP threads; counts are summed, so the result is schedule-independent.
std::vector<std::uint64_t> selection_counts(std::span<const Candidate> pool,
                                            const SamplerConfig& cfg,
                                            SamplingStrategy strategy,
                                            std::uint64_t trials);

}  // namespace libra
