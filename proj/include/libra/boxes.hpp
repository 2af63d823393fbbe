#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace libra {

/// Axis-aligned box in continuous pixel coordinates (no +1 convention).
struct Box2D {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const;

  friend bool operator==(const Box2D&, const Box2D&) = default;
};

/// Intersection over union; 0 when the union has zero area.
double iou(const Box2D& a, const Box2D& b);

enum class Label { positive, negative, ignored };

std::string_view to_string(Label label);

struct Candidate {
  Box2D box;
  std::optional<std::size_t> gt_index;
  double iou = 0.0;
  Label label = Label::negative;
};

struct AssignConfig {
  double pos_iou_threshold = 0.5;
  double neg_iou_threshold = 0.5;

  void validate() const;
};

/// Max-IoU assignment. Each candidate keeps its best ground truth (lowest
/// index on ties) and is labelled positive when iou >= pos threshold,
/// negative when iou < neg threshold, ignored otherwise.
std::vector<Candidate> assign(std::span<const Box2D> candidates,
                              std::span<const Box2D> ground_truths,
                              const AssignConfig& cfg);

}  // namespace libra
