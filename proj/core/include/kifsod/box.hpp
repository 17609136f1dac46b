#pragma once

#include <algorithm>
#include <compare>
#include <vector>

namespace kifsod {

using ClassId = int;

/// Axis-aligned box in continuous pixel coordinates, (x0, y0) top-left.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }
  bool degenerate() const { return !(x1 > x0 && y1 > y0); }

  auto operator<=>(const Box&) const = default;
};

/// Intersection over union. Symmetric, in [0, 1]; a zero-area box has IoU 0 with anything.
double match_iou(const Box& a, const Box& b);

Box clip_box(const Box& b, double width, double height);

/// Greedy non-maximum suppression over boxes already sorted by descending score.
/// Returns indices (into `boxes`) of the survivors, at most `max_keep` of them.
std::vector<int> nms_sorted(const std::vector<Box>& boxes, double iou_threshold, int max_keep);

}  // namespace kifsod
