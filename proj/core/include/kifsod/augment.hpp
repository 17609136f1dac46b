#pragma once

#include "kifsod/rng.hpp"
#include "kifsod/synthgen.hpp"

namespace kifsod {

/// Photometric-free augmentation shared by base pretraining and feature extraction:
/// a zoom about the image center followed by an optional horizontal flip.
struct Augmentation {
  bool flip = false;
  double scale = 1.0;

  bool identity() const { return !flip && scale == 1.0; }
};

struct AugmentationRange {
  double min_scale = 0.85;
  double max_scale = 1.15;
  double flip_probability = 0.5;
};

Augmentation draw_augmentation(Rng& rng, const AugmentationRange& range = {});

/// Resamples pixels bilinearly (uncovered area filled with mid gray) and maps boxes, clipped to
/// the canvas. Annotation count and order are preserved.
AnnotatedImage apply_augmentation(const AnnotatedImage& image, const Augmentation& aug);

}  // namespace kifsod
