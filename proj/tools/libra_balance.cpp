// libra-balance: sampler histograms, loss curves, gradient checks, pyramid
// statistics and the toy regression demo.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include <CLI11.hpp>

#include "libra/commands.hpp"

namespace {

struct Flags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::optional<std::string> out;
  std::optional<double> alpha;
  std::optional<double> gamma;
  std::optional<double> lambda;
  std::optional<std::size_t> bins;
  std::optional<std::size_t> neg_count;
  std::optional<std::size_t> pos_count;
  std::optional<std::string> refine;
  std::optional<std::string> scenario;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config file (flags override it)");
  sub->add_option("--seed", f.seed, "64-bit seed (fallback: LIBRA_BALANCE_SEED)");
  sub->add_option("--trials", f.trials, "Monte-Carlo trials")->check(CLI::PositiveNumber);
  sub->add_option("--out", f.out, "Output path (stdout when omitted)");
  sub->add_option("--alpha", f.alpha, "Balanced L1 alpha");
  sub->add_option("--gamma", f.gamma, "Balanced L1 gamma");
  sub->add_option("--lambda", f.lambda, "Localization loss weight");
  sub->add_option("--bins", f.bins, "Number of IoU bins K");
  sub->add_option("--neg-count", f.neg_count, "Negatives to sample");
  sub->add_option("--pos-count", f.pos_count, "Positives to sample");
  sub->add_option("--refine", f.refine, "Non-local refinement")->check(CLI::IsMember({"on", "off"}));
  sub->add_option("--scenario", f.scenario, "Scenario JSON instead of generated scenarios");
}

libra::RunConfig resolve(const std::string& subcommand, const Flags& f) {
  libra::RunConfig cfg;
  cfg.subcommand = subcommand;
  if (const char* env = std::getenv("LIBRA_BALANCE_SEED"); env && *env) {
    cfg.seed = std::stoull(env);
  }
  if (f.config) {
    std::ifstream in(*f.config);
    if (!in) throw std::runtime_error("cannot open config '" + *f.config + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    cfg = libra::apply_json_config(cfg, ss.str());
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.trials) cfg.trials = *f.trials;
  if (f.out) cfg.out = *f.out;
  if (f.alpha) cfg.alpha = *f.alpha;
  if (f.gamma) cfg.gamma = *f.gamma;
  if ((f.alpha || f.gamma) && !cfg.curve_params.empty()) cfg.curve_params.clear();
  if (f.lambda) cfg.lambda = *f.lambda;
  if (f.bins) cfg.sampler.num_bins = *f.bins;
  if (f.neg_count) cfg.sampler.num_negatives = *f.neg_count;
  if (f.pos_count) cfg.sampler.num_positives = *f.pos_count;
  if (f.refine) cfg.pyramid.refine = *f.refine == "on";
  if (f.scenario) cfg.scenario_path = *f.scenario;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balanced sampling, feature pyramid and balanced L1 toolkit"};
  app.require_subcommand(1);
  Flags flags;
  const std::pair<const char*, const char*> subcommands[] = {
      {"sample-hist", "Random vs IoU-balanced negative selection histogram"},
      {"loss-curves", "Smooth L1 and balanced L1 loss and gradient curves"},
      {"gradcheck", "Analytic gradients against central finite differences"},
      {"pyramid-stats", "Per-level statistics before and after pyramid balancing"},
      {"toy-fit", "Toy regression with outliers under both losses"}};
  for (const auto& [name, description] : subcommands) {
    add_common(app.add_subcommand(name, description), flags);
  }
  CLI11_PARSE(app, argc, argv);

  try {
    const libra::RunConfig cfg = resolve(app.get_subcommands().front()->get_name(), flags);
    return libra::run_command(cfg, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
