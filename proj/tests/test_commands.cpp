#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "libra/commands.hpp"
#include "libra/loss.hpp"
#include "libra/scenario.hpp"

using namespace libra;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "libra_balance_test_commands";
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("gen_scenario") {
  ScenarioConfig cfg;
  CHECK(scenario_to_json(gen_scenario(cfg, 5)) == scenario_to_json(gen_scenario(cfg, 5)));
  CHECK(scenario_to_json(gen_scenario(cfg, 5)) != scenario_to_json(gen_scenario(cfg, 6)));
  cfg.num_candidates = 0;
  CHECK_THROWS_AS(gen_scenario(cfg, 1), std::invalid_argument);

  SUBCASE("high skew keeps most negatives below IoU 0.05") {
    ScenarioConfig skewed;
    skewed.skew = 0.9;
    std::size_t negatives = 0, easy = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      const Scenario s = gen_scenario(skewed, seed);
      for (const auto& c : assign(s.candidates, s.ground_truths, AssignConfig{})) {
        if (c.label != Label::negative) continue;
        ++negatives;
        if (c.iou < 0.05) ++easy;
      }
    }
    CHECK(static_cast<double>(easy) / static_cast<double>(negatives) >= 0.7);
  }
  SUBCASE("boxes stay inside the image") {
    const Scenario s = gen_scenario(ScenarioConfig{}, 3);
    for (const auto& b : s.candidates) {
      CHECK(b.valid());
      CHECK((b.x1 >= 0 && b.x2 <= 512 && b.y1 >= 0 && b.y2 <= 512));
    }
  }
}

TEST_CASE("scenario json") {
  const Scenario s = parse_scenario_json(
      R"({"ground_truths": [[0,0,10,10]], "candidates": [[1,1,5,5],[20,20,30,40]]})");
  CHECK(s.ground_truths.size() == 1);
  CHECK(s.candidates[1] == Box2D{20, 20, 30, 40});
  CHECK(parse_scenario_json(scenario_to_json(s)).candidates == s.candidates);
  CHECK_THROWS(parse_scenario_json(R"({"candidates": []})"));
  CHECK_THROWS(parse_scenario_json(R"({"ground_truths": [[0,0,1]], "candidates": []})"));
  CHECK_THROWS(parse_scenario_json(R"({"ground_truths": [[5,0,1,1]], "candidates": []})"));
}

TEST_CASE("config precedence") {
  RunConfig base;
  base.seed = 99;  // stands in for the environment fallback
  const RunConfig cfg = apply_json_config(
      base, R"({"seed": 5, "sampler": {"num_bins": 4}, "loss": {"alpha": 0.3, "curves": [[0.2, 1.0]]},
                "pyramid": {"refine": false, "target_level": 1}})");
  CHECK(cfg.seed == 5);
  CHECK(cfg.sampler.num_bins == 4);
  CHECK(cfg.sampler.num_negatives == base.sampler.num_negatives);
  CHECK(cfg.alpha == 0.3);
  CHECK(cfg.gamma == 1.5);
  CHECK(cfg.curve_params.size() == 1);
  CHECK_FALSE(cfg.pyramid.refine);
  CHECK(cfg.pyramid.target_level == 1u);
  CHECK(apply_json_config(base, "{}").seed == 99);
  CHECK_THROWS(apply_json_config(base, "[1,2]"));
}

TEST_CASE("loss-curves output") {
  RunConfig cfg;
  cfg.out = (scratch_dir() / "curves.csv").string();
  std::ostringstream log;
  REQUIRE(cmd_loss_curves(cfg, log) == 0);
  const auto rows = read_csv(cfg.out);
  REQUIRE(rows.size() == 202);
  CHECK(rows[0] == std::vector<std::string>{"x", "smooth_l1_loss", "smooth_l1_grad",
                                            "balanced_l1_loss", "balanced_l1_grad"});
  CHECK(rows[1][0] == "0.00");
  CHECK(std::stod(rows[1][2]) == 0.0);
  CHECK(std::stod(rows[1][4]) == 0.0);
  CHECK(rows[101][0] == "1.00");
  CHECK(std::stod(rows[101][4]) == 1.5);
  CHECK(rows[201][0] == "2.00");
  double prev = -1.0;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const double g = std::stod(rows[r][4]);
    CHECK(g >= prev);
    prev = g;
  }
  CHECK(slurp(cfg.out).back() == '\n');

  cfg.curve_params = {{0.5, 1.5}, {0.2, 1.0}};
  REQUIRE(cmd_loss_curves(cfg, log) == 0);
  CHECK(fs::exists(scratch_dir() / "curves_a0.5_g1.5.csv"));
  CHECK(fs::exists(scratch_dir() / "curves_a0.2_g1.csv"));

  RunConfig bad;
  bad.alpha = -1.0;
  CHECK_THROWS_AS(cmd_loss_curves(bad, log), std::invalid_argument);
}

TEST_CASE("sample-hist") {
  std::ostringstream log;
  SUBCASE("K=3 on the skewed generator favours hard negatives") {
    RunConfig cfg;
    cfg.trials = 200;
    cfg.seed = 4;
    cfg.out = (scratch_dir() / "hist.csv").string();
    REQUIRE(cmd_sample_hist(cfg, log) == 0);
    const auto rows = read_csv(cfg.out);
    CHECK(rows[0] == std::vector<std::string>{"iou_bin_lo", "iou_bin_hi", "random_count",
                                              "balanced_count", "pool_count"});
    CHECK(rows.size() == cfg.hist_bins + 1);
    std::ifstream js(scratch_dir() / "hist.json");
    const std::string summary = slurp(scratch_dir() / "hist.json");
    CHECK(summary.find("\"balanced_hard_fraction\"") != std::string::npos);
    std::uint64_t random_total = 0, balanced_total = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      random_total += std::stoull(rows[r][2]);
      balanced_total += std::stoull(rows[r][3]);
    }
    CHECK(random_total == balanced_total);
  }
  SUBCASE("single bin: random and balanced are statistically equal") {
    RunConfig cfg;
    cfg.trials = 300;
    cfg.sampler.num_bins = 1;
    cfg.out = (scratch_dir() / "hist_k1.csv").string();
    REQUIRE(cmd_sample_hist(cfg, log) == 0);
    const auto rows = read_csv(cfg.out);
    std::uint64_t rnd = 0, bal = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      rnd += std::stoull(rows[r][2]);
      bal += std::stoull(rows[r][3]);
    }
    const std::uint64_t first_rnd = std::stoull(rows[1][2]), first_bal = std::stoull(rows[1][3]);
    const double p_r = static_cast<double>(first_rnd) / rnd;
    const double p_b = static_cast<double>(first_bal) / bal;
    const double se = std::sqrt(p_r * (1 - p_r) / rnd + p_b * (1 - p_b) / bal);
    CHECK(std::abs(p_r - p_b) < 4 * se);
  }
  SUBCASE("scenario without negatives yields zero rows") {
    const fs::path scenario = scratch_dir() / "all_positive.json";
    std::ofstream(scenario) << R"({"ground_truths": [[0,0,10,10]], "candidates": [[0,0,10,10],[0,0,10,9]]})";
    RunConfig cfg;
    cfg.trials = 3;
    cfg.scenario_path = scenario.string();
    cfg.out = (scratch_dir() / "hist_empty.csv").string();
    REQUIRE(cmd_sample_hist(cfg, log) == 0);
    const auto rows = read_csv(cfg.out);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      CHECK(rows[r][2] == "0");
      CHECK(rows[r][3] == "0");
      CHECK(rows[r][4] == "0");
    }
  }
  SUBCASE("missing scenario file is reported with its path") {
    RunConfig cfg;
    cfg.scenario_path = "/nonexistent/scenario.json";
    try {
      cmd_sample_hist(cfg, log);
      FAIL("expected an exception");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("/nonexistent/scenario.json") != std::string::npos);
    }
  }
}

TEST_CASE("gradcheck command passes and reports every op") {
  RunConfig cfg;
  cfg.out = (scratch_dir() / "gradcheck.csv").string();
  std::ostringstream log;
  CHECK(cmd_gradcheck(cfg, log) == 0);
  const auto rows = read_csv(cfg.out);
  std::vector<std::string> names;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    names.push_back(rows[r][0]);
    CHECK(rows[r][4] == "pass");
  }
  for (const char* op : {"balanced_l1", "localization_loss", "multi_task_loss", "resize_nearest",
                         "maxpool_to", "mean_stack", "matmul", "softmax_rows", "conv1x1",
                         "refine_nonlocal", "balanced_feature_pyramid", "linear_sum"}) {
    CHECK(std::find(names.begin(), names.end(), op) != names.end());
  }
}

TEST_CASE("pyramid-stats") {
  RunConfig cfg;
  cfg.out = (scratch_dir() / "pyr.csv").string();
  std::ostringstream log;
  REQUIRE(cmd_pyramid_stats(cfg, log) == 0);
  const auto rows = read_csv(cfg.out);
  REQUIRE(rows.size() == cfg.pyramid.levels + 1);
  CHECK(rows[1][2] == "32");
  CHECK(rows[4][2] == "4");
}

TEST_CASE("toy-fit") {
  std::ostringstream log;
  SUBCASE("realizable pool converges for both losses") {
    RunConfig cfg;
    cfg.toy.outlier_fraction = 0.0;
    cfg.toy.noise = 0.0;
    cfg.out = (scratch_dir() / "toy_clean.csv").string();
    REQUIRE(cmd_toy_fit(cfg, log) == 0);
    const auto rows = read_csv(cfg.out);
    CHECK(std::stod(rows.back()[1]) < 1e-6);
    CHECK(std::stod(rows.back()[2]) < 1e-6);
  }
  SUBCASE("identical seeds reproduce the trajectory") {
    RunConfig cfg;
    cfg.toy.steps = 200;
    cfg.out = (scratch_dir() / "toy_a.csv").string();
    REQUIRE(cmd_toy_fit(cfg, log) == 0);
    const std::string first = slurp(cfg.out);
    REQUIRE(cmd_toy_fit(cfg, log) == 0);
    CHECK(slurp(cfg.out) == first);
  }
  SUBCASE("divergence is reported") {
    RunConfig cfg;
    cfg.toy.learning_rate = std::numeric_limits<double>::max();
    cfg.toy.steps = 50;
    cfg.out = (scratch_dir() / "toy_div.csv").string();
    CHECK(cmd_toy_fit(cfg, log) == 1);
  }
}

TEST_CASE("unknown subcommand") {
  RunConfig cfg;
  cfg.subcommand = "train";
  std::ostringstream log;
  CHECK_THROWS_AS(run_command(cfg, log), std::invalid_argument);
}
