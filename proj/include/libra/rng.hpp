#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace libra {

/// Seeded random source shared by every stochastic component.
///
/// Algorithm "libra-rng v1":
///   - engine: std::mt19937_64 seeded with the 64-bit seed (the engine's
///     output sequence is fixed by the C++ standard);
///   - bounded integers: Lemire's multiply-shift with rejection, so no
///     std::*_distribution (whose output is implementation-defined) is used;
///   - reals: top 53 bits scaled into [0, 1);
///   - normals: Box-Muller, one value per call (the sine twin is discarded);
///   - stream derivation: splitmix64 over (seed, stream index).
/// Golden files depend on every step above; bump the version if any changes.
class Rng {
 public:
  static constexpr int kVersion = 1;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform real in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal deviate.
  double normal();

  /// Moves a uniformly chosen k-subset of `items` (without replacement) into
  /// its first k slots; partial Fisher-Yates.
  void choose_prefix(std::span<std::size_t> items, std::size_t k);

 private:
  std::mt19937_64 engine_;
};

/// Independent seed for sub-stream `stream` of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace libra
