#include "kifsod/box.hpp"

namespace kifsod {

double match_iou(const Box& a, const Box& b) {
  if (a.degenerate() || b.degenerate()) return 0.0;
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

Box clip_box(const Box& b, double width, double height) {
  return {std::clamp(b.x0, 0.0, width), std::clamp(b.y0, 0.0, height), std::clamp(b.x1, 0.0, width),
          std::clamp(b.y1, 0.0, height)};
}

std::vector<int> nms_sorted(const std::vector<Box>& boxes, double iou_threshold, int max_keep) {
  std::vector<int> keep;
  std::vector<char> suppressed(boxes.size(), 0);
  for (std::size_t i = 0; i < boxes.size() && static_cast<int>(keep.size()) < max_keep; ++i) {
    if (suppressed[i]) continue;
    keep.push_back(static_cast<int>(i));
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      if (!suppressed[j] && match_iou(boxes[i], boxes[j]) > iou_threshold) suppressed[j] = 1;
    }
  }
  return keep;
}

}  // namespace kifsod
