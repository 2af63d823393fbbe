#include "libra/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "libra/reference.hpp"
#include "libra/rng.hpp"

namespace libra {

void IoUBinning::validate() const {
  if (num_bins < 1) throw std::invalid_argument("IoUBinning: need at least one bin");
  if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) {
    throw std::invalid_argument("IoUBinning: need 0 <= lo < hi <= 1");
  }
}

std::size_t IoUBinning::bin_of(double value) const {
  if (value < lo) return 0;
  if (value >= hi) return num_bins - 1;
  const auto k = static_cast<std::size_t>(std::floor((value - lo) / (hi - lo) *
                                                     static_cast<double>(num_bins)));
  return std::min(k, num_bins - 1);
}

double IoUBinning::lower_edge(std::size_t k) const {
  return lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(num_bins);
}

double IoUBinning::upper_edge(std::size_t k) const {
  return k + 1 == num_bins ? hi : lower_edge(k + 1);
}

void SamplerConfig::validate() const {
  if (num_negatives < 1) throw std::invalid_argument("SamplerConfig: num_negatives must be >= 1");
  if (num_positives < 1) throw std::invalid_argument("SamplerConfig: num_positives must be >= 1");
  binning().validate();
}

namespace {

std::vector<std::size_t> eligible(std::span<const Candidate> pool, Label label) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].label == label) out.push_back(i);
  }
  return out;
}

double hard_fraction_of(std::span<const Candidate> pool, std::span<const std::size_t> chosen) {
  if (chosen.empty()) return 0.0;
  const auto hard = std::count_if(chosen.begin(), chosen.end(), [&](std::size_t i) {
    return pool[i].iou >= kHardNegativeIoU;
  });
  return static_cast<double>(hard) / static_cast<double>(chosen.size());
}

void finish_binned(SampleReport& report, std::span<const Candidate> pool,
                   std::span<const std::size_t> members, const IoUBinning& binning) {
  report.bin_pool_counts.assign(binning.num_bins, 0);
  report.bin_selected_counts.assign(binning.num_bins, 0);
  for (auto i : members) ++report.bin_pool_counts[binning.bin_of(pool[i].iou)];
  for (auto i : report.selected) ++report.bin_selected_counts[binning.bin_of(pool[i].iou)];
  std::sort(report.selected.begin(), report.selected.end());
  report.hard_fraction = hard_fraction_of(pool, report.selected);
}

}  // namespace

SampleReport sample_random(std::span<const Candidate> negatives, std::size_t num_negatives,
                           std::uint64_t seed, const IoUBinning& binning) {
  binning.validate();
  std::vector<std::size_t> members = eligible(negatives, Label::negative);
  const std::size_t take = std::min(num_negatives, members.size());
  std::vector<std::size_t> scratch = members;
  Rng rng(seed);
  rng.choose_prefix(scratch, take);

  SampleReport report;
  report.selected.assign(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(take));
  finish_binned(report, negatives, members, binning);
  return report;
}

std::vector<std::size_t> iou_balanced_quotas(std::span<const std::size_t> pool_counts,
                                             std::size_t num_negatives) {
  const std::size_t K = pool_counts.size();
  if (K == 0) throw std::invalid_argument("iou_balanced_quotas: no bins");
  std::vector<std::size_t> take(K);
  std::size_t total_pool = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t quota = num_negatives / K + (k < num_negatives % K ? 1 : 0);
    take[k] = std::min(quota, pool_counts[k]);
    total_pool += pool_counts[k];
  }
  std::size_t taken = 0;
  for (auto t : take) taken += t;
  std::size_t shortfall = std::min(num_negatives, total_pool) - taken;
  while (shortfall > 0) {
    for (std::size_t k = 0; k < K && shortfall > 0; ++k) {
      if (take[k] < pool_counts[k]) {
        ++take[k];
        --shortfall;
      }
    }
  }
  return take;
}

SampleReport sample_iou_balanced(std::span<const Candidate> negatives, const SamplerConfig& cfg) {
  cfg.validate();
  const IoUBinning binning = cfg.binning();
  const std::vector<std::size_t> members = eligible(negatives, Label::negative);

  std::vector<std::vector<std::size_t>> bins(binning.num_bins);
  for (auto i : members) bins[binning.bin_of(negatives[i].iou)].push_back(i);
  std::vector<std::size_t> counts(binning.num_bins);
  for (std::size_t k = 0; k < bins.size(); ++k) counts[k] = bins[k].size();
  const std::vector<std::size_t> quotas = iou_balanced_quotas(counts, cfg.num_negatives);

  SampleReport report;
  Rng rng(cfg.seed);
  for (std::size_t k = 0; k < bins.size(); ++k) {
    rng.choose_prefix(bins[k], quotas[k]);
    report.selected.insert(report.selected.end(), bins[k].begin(),
                           bins[k].begin() + static_cast<std::ptrdiff_t>(quotas[k]));
  }
  finish_binned(report, negatives, members, binning);
  return report;
}

std::vector<std::size_t> positive_quotas(std::span<const std::size_t> group_sizes,
                                         std::size_t budget) {
  std::vector<std::size_t> take(group_sizes.size(), 0);
  std::size_t total = 0;
  for (auto s : group_sizes) total += s;
  std::size_t remaining = std::min(budget, total);
  while (remaining > 0) {
    for (std::size_t g = 0; g < take.size() && remaining > 0; ++g) {
      if (take[g] < group_sizes[g]) {
        ++take[g];
        --remaining;
      }
    }
  }
  return take;
}

SampleReport sample_positive_balanced(std::span<const Candidate> positives,
                                      std::size_t num_positives, std::uint64_t seed) {
  std::map<std::size_t, std::vector<std::size_t>> by_gt;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    if (positives[i].label == Label::positive && positives[i].gt_index) {
      by_gt[*positives[i].gt_index].push_back(i);
    }
  }
  const std::size_t num_groups = by_gt.empty() ? 0 : by_gt.rbegin()->first + 1;

  // Dense per-ground-truth groups so absent indices simply have size 0.
  std::vector<std::vector<std::size_t>> groups(num_groups);
  for (auto& [g, members] : by_gt) groups[g] = std::move(members);
  std::vector<std::size_t> sizes(num_groups);
  for (std::size_t g = 0; g < num_groups; ++g) sizes[g] = groups[g].size();
  const std::vector<std::size_t> quotas = positive_quotas(sizes, num_positives);

  SampleReport report;
  report.bin_pool_counts = sizes;
  report.bin_selected_counts = quotas;
  Rng rng(seed);
  for (std::size_t g = 0; g < num_groups; ++g) {
    rng.choose_prefix(groups[g], quotas[g]);
    report.selected.insert(report.selected.end(), groups[g].begin(),
                           groups[g].begin() + static_cast<std::ptrdiff_t>(quotas[g]));
  }
  std::sort(report.selected.begin(), report.selected.end());
  report.hard_fraction = hard_fraction_of(positives, report.selected);
  return report;
}

namespace {

SampleReport run_strategy(std::span<const Candidate> pool, const SamplerConfig& cfg,
                          SamplingStrategy strategy, std::uint64_t trial) {
  SamplerConfig trial_cfg = cfg;
  trial_cfg.seed = derive_seed(cfg.seed, trial);
  if (strategy == SamplingStrategy::random) {
    return sample_random(pool, cfg.num_negatives, trial_cfg.seed, cfg.binning());
  }
  return sample_iou_balanced(pool, trial_cfg);
}

}  // namespace

std::vector<std::uint64_t> selection_counts(std::span<const Candidate> pool,
                                            const SamplerConfig& cfg,
                                            SamplingStrategy strategy,
                                            std::uint64_t trials) {
  cfg.validate();
  std::vector<std::uint64_t> totals(pool.size(), 0);
  const auto n = static_cast<std::int64_t>(trials);
#pragma omp parallel
  {
    std::vector<std::uint64_t> local(pool.size(), 0);
#pragma omp for schedule(static)
    for (std::int64_t t = 0; t < n; ++t) {
      const SampleReport r = run_strategy(pool, cfg, strategy, static_cast<std::uint64_t>(t));
      for (auto i : r.selected) ++local[i];
    }
#pragma omp critical
    for (std::size_t i = 0; i < totals.size(); ++i) totals[i] += local[i];
  }
  return totals;
}

}  // namespace libra

namespace libra::reference {

std::vector<std::uint64_t> selection_counts(std::span<const Candidate> pool,
                                            const SamplerConfig& cfg,
                                            SamplingStrategy strategy,
                                            std::uint64_t trials) {
  cfg.validate();
  std::vector<std::uint64_t> totals(pool.size(), 0);
  for (std::uint64_t t = 0; t < trials; ++t) {
    for (auto i : run_strategy(pool, cfg, strategy, t).selected) ++totals[i];
  }
  return totals;
}

}  // namespace libra::reference
