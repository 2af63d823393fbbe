#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "libra/boxes.hpp"
#include "libra/sampler.hpp"
#include "libra/scenario.hpp"

namespace libra {

struct PyramidRunConfig {
  std::size_t levels = 4;
  std::size_t base_resolution = 32;
  std::size_t channels = 8;
  std::optional<std::size_t> target_level;  // default: second-coarsest
  bool refine = true;
  std::size_t embed_channels = 0;  // 0: channels / 2
};

struct ToyFitConfig {
  std::size_t samples = 256;
  std::size_t steps = 2000;
  double learning_rate = 0.1;
  double outlier_fraction = 0.2;
  double outlier_scale = 4.0;
  double noise = 0.02;
};

struct RunConfig {
  std::string subcommand;
  ScenarioConfig scenario;
  std::optional<std::string> scenario_path;  // fixed scenario instead of generated ones
  AssignConfig assign;
  SamplerConfig sampler;
  std::size_t hist_bins = 10;
  double alpha = 0.5;
  double gamma = 1.5;
  double lambda = 1.0;
  std::vector<std::pair<double, double>> curve_params;  // empty: {(alpha, gamma)}
  PyramidRunConfig pyramid;
  ToyFitConfig toy;
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::string out;

  void validate() const;
};

/// Overlays the keys present in a JSON config document onto `base`.
RunConfig apply_json_config(RunConfig base, const std::string& json_text);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  bool passed() const { return max_rel_error < tolerance && checked > 0; }
};

inline constexpr double kFiniteDiffStep = 1e-6;
inline constexpr double kOpTolerance = 1e-6;
inline constexpr double kPyramidTolerance = 1e-4;

/// Loss functions on 100 seeded random inputs each.
std::vector<GradCheckEntry> gradcheck_losses(std::uint64_t seed, const RunConfig& cfg);
/// Every differentiable tensor operation plus a linear sanity functional.
std::vector<GradCheckEntry> gradcheck_tensor_ops(std::uint64_t seed);
/// End-to-end balanced pyramid (inputs and non-local weights).
GradCheckEntry gradcheck_pyramid(std::uint64_t seed, std::size_t levels, std::size_t base,
                                 std::size_t channels, bool refine);

// Subcommands. Each writes its primary output to cfg.out (stdout when empty),
// logs a human-readable summary to `log` and returns the process exit code.
int cmd_sample_hist(const RunConfig& cfg, std::ostream& log);
int cmd_loss_curves(const RunConfig& cfg, std::ostream& log);
int cmd_gradcheck(const RunConfig& cfg, std::ostream& log);
int cmd_pyramid_stats(const RunConfig& cfg, std::ostream& log);
int cmd_toy_fit(const RunConfig& cfg, std::ostream& log);

int run_command(const RunConfig& cfg, std::ostream& log);

}  // namespace libra
