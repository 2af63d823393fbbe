#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "libra/boxes.hpp"

namespace libra {

struct ScenarioConfig {
  double image_width = 512.0;
  double image_height = 512.0;
  std::size_t num_ground_truths = 3;
  std::size_t num_candidates = 1000;
  // Probability that a candidate is a background box dropped anywhere in the
  // image instead of a jittered copy of a ground truth. Higher values push
  // the negative pool towards IoU 0.
  double skew = 0.9;

  void validate() const;
};

struct Scenario {
  std::vector<Box2D> ground_truths;
  std::vector<Box2D> candidates;
};

Scenario gen_scenario(const ScenarioConfig& cfg, std::uint64_t seed);

// {"ground_truths": [[x1,y1,x2,y2], ...], "candidates": [[...], ...]}
Scenario parse_scenario_json(const std::string& text);
std::string scenario_to_json(const Scenario& s);

}  // namespace libra
