#include "kifsod/augment.hpp"

#include <cmath>

namespace kifsod {

Augmentation draw_augmentation(Rng& rng, const AugmentationRange& range) {
  std::uniform_real_distribution<double> scale(range.min_scale, range.max_scale);
  std::bernoulli_distribution flip(range.flip_probability);
  Augmentation a;
  a.scale = scale(rng);
  a.flip = flip(rng);
  return a;
}

AnnotatedImage apply_augmentation(const AnnotatedImage& image, const Augmentation& aug) {
  if (aug.identity()) return image;
  const int w = image.width, h = image.height;
  const double cx = 0.5 * w, cy = 0.5 * h;

  AnnotatedImage out;
  out.width = w;
  out.height = h;
  out.labels = image.labels;
  out.pixels.assign(image.pixels.size(), 0.5f);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Output pixel center mapped back into the source image.
      const double ox = aug.flip ? (w - (x + 0.5)) : (x + 0.5);
      const double sx = (ox - cx) / aug.scale + cx - 0.5;
      const double sy = ((y + 0.5) - cy) / aug.scale + cy - 0.5;
      if (sx < -0.5 || sy < -0.5 || sx > w - 0.5 || sy > h - 0.5) continue;
      const double fx = std::clamp(sx, 0.0, w - 1.0), fy = std::clamp(sy, 0.0, h - 1.0);
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double lx = fx - x0, ly = fy - y0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - ly) * ((1 - lx) * image.at(y0, x0, c) + lx * image.at(y0, x1, c)) +
                         ly * ((1 - lx) * image.at(y1, x0, c) + lx * image.at(y1, x1, c));
        out.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<float>(v);
      }
    }
  }

  for (const Box& b : image.boxes) {
    Box m{(b.x0 - cx) * aug.scale + cx, (b.y0 - cy) * aug.scale + cy, (b.x1 - cx) * aug.scale + cx,
          (b.y1 - cy) * aug.scale + cy};
    if (aug.flip) m = {w - m.x1, m.y0, w - m.x0, m.y1};
    out.boxes.push_back(clip_box(m, w, h));
  }
  return out;
}

}  // namespace kifsod
