#include "libra/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace libra {

bool Box2D::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x2 >= x1 && y2 >= y1;
}

double iou(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::string_view to_string(Label label) {
  switch (label) {
    case Label::positive: return "positive";
    case Label::negative: return "negative";
    case Label::ignored: return "ignored";
  }
  return "unknown";
}

void AssignConfig::validate() const {
  if (!(neg_iou_threshold >= 0.0 && neg_iou_threshold <= pos_iou_threshold &&
        pos_iou_threshold <= 1.0 && pos_iou_threshold > 0.0)) {
    throw std::invalid_argument(
        "AssignConfig: need 0 <= neg_iou_threshold <= pos_iou_threshold <= 1, pos > 0");
  }
}

std::vector<Candidate> assign(std::span<const Box2D> candidates,
                              std::span<const Box2D> ground_truths,
                              const AssignConfig& cfg) {
  cfg.validate();
  std::vector<Candidate> out;
  out.reserve(candidates.size());
  for (const auto& box : candidates) {
    Candidate c{box, std::nullopt, 0.0, Label::negative};
    for (std::size_t g = 0; g < ground_truths.size(); ++g) {
      const double v = iou(box, ground_truths[g]);
      if (!c.gt_index || v > c.iou) {
        c.gt_index = g;
        c.iou = v;
      }
    }
    if (c.gt_index && c.iou >= cfg.pos_iou_threshold) {
      c.label = Label::positive;
    } else if (c.iou < cfg.neg_iou_threshold) {
      c.label = Label::negative;
    } else {
      c.label = Label::ignored;
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace libra
