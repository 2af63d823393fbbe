#include "libra/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "libra/rng.hpp"

namespace libra {

void ScenarioConfig::validate() const {
  if (!(image_width > 0.0 && image_height > 0.0)) {
    throw std::invalid_argument("scenario: image extent must be positive");
  }
  if (num_candidates == 0) throw std::invalid_argument("scenario: candidate count must be positive");
  if (!(skew >= 0.0 && skew <= 1.0)) throw std::invalid_argument("scenario: skew must lie in [0,1]");
}

namespace {

Box2D place(Rng& rng, double w, double h, double W, double H) {
  const double x1 = rng.uniform(0.0, W - w);
  const double y1 = rng.uniform(0.0, H - h);
  return {x1, y1, x1 + w, y1 + h};
}

// Shifted and rescaled copy of `gt`, kept inside the image.
Box2D jitter(Rng& rng, const Box2D& gt, double W, double H) {
  const double w = std::min(W, gt.width() * std::exp(rng.uniform(-0.5, 0.5)));
  const double h = std::min(H, gt.height() * std::exp(rng.uniform(-0.5, 0.5)));
  const double cx = 0.5 * (gt.x1 + gt.x2) + rng.uniform(-0.8, 0.8) * gt.width();
  const double cy = 0.5 * (gt.y1 + gt.y2) + rng.uniform(-0.8, 0.8) * gt.height();
  const double x1 = std::clamp(cx - 0.5 * w, 0.0, W - w);
  const double y1 = std::clamp(cy - 0.5 * h, 0.0, H - h);
  return {x1, y1, x1 + w, y1 + h};
}

std::vector<Box2D> parse_boxes(const nlohmann::json& arr, const char* key) {
  if (!arr.is_array()) throw std::invalid_argument(std::string("scenario: '") + key + "' must be an array");
  std::vector<Box2D> out;
  for (const auto& b : arr) {
    if (!b.is_array() || b.size() != 4) {
      throw std::invalid_argument(std::string("scenario: entries of '") + key +
                                  "' must be [x1,y1,x2,y2]");
    }
    Box2D box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    if (!box.valid()) throw std::invalid_argument(std::string("scenario: invalid box in '") + key + "'");
    out.push_back(box);
  }
  return out;
}

}  // namespace

Scenario gen_scenario(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const double W = cfg.image_width, H = cfg.image_height;
  Rng rng(seed);
  Scenario s;
  for (std::size_t g = 0; g < cfg.num_ground_truths; ++g) {
    s.ground_truths.push_back(
        place(rng, rng.uniform(0.08, 0.25) * W, rng.uniform(0.08, 0.25) * H, W, H));
  }
  for (std::size_t i = 0; i < cfg.num_candidates; ++i) {
    if (s.ground_truths.empty() || rng.uniform() < cfg.skew) {
      s.candidates.push_back(
          place(rng, rng.uniform(0.03, 0.15) * W, rng.uniform(0.03, 0.15) * H, W, H));
    } else {
      const auto g = static_cast<std::size_t>(rng.below(s.ground_truths.size()));
      s.candidates.push_back(jitter(rng, s.ground_truths[g], W, H));
    }
  }
  return s;
}

Scenario parse_scenario_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  if (!j.is_object() || !j.contains("ground_truths") || !j.contains("candidates")) {
    throw std::invalid_argument("scenario: expected an object with 'ground_truths' and 'candidates'");
  }
  return {parse_boxes(j["ground_truths"], "ground_truths"),
          parse_boxes(j["candidates"], "candidates")};
}

std::string scenario_to_json(const Scenario& s) {
  auto boxes = [](const std::vector<Box2D>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : v) arr.push_back({b.x1, b.y1, b.x2, b.y2});
    return arr;
  };
  nlohmann::json j;
  j["ground_truths"] = boxes(s.ground_truths);
  j["candidates"] = boxes(s.candidates);
  return j.dump();
}

}  // namespace libra
