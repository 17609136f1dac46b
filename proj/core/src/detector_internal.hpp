#pragma once

#include <array>
#include <vector>

#include "kifsod/detector.hpp"

namespace kifsod::detail {

struct BackboneTrace {
  std::array<ConvGeometry, 3> geom;
  std::array<Matrix, 3> cols;  // empty unless kept for backward
  std::array<Matrix, 3> act;   // post-ReLU maps
};

BackboneTrace run_backbone(const DetectorParams& p, const AnnotatedImage& image, bool keep_cols);

/// 5 x cells: objectness logit then four anchor deltas per cell.
Matrix run_proposal_head(const DetectorParams& p, const Matrix& features);

std::vector<Proposal> select_proposals(const DetectorParams& p, const Matrix& rpn, int proposal_cap);

struct RoiTrace {
  std::vector<Box> rois;
  std::vector<std::vector<RoiTap>> taps;
  Matrix pooled;  // pooled_dim x N
  Matrix h1;      // hidden x N
  Matrix z;       // d x N
  Matrix mask;    // d x N dropout multipliers; empty when dropout is off
  Matrix zc;      // classifier input
  Matrix logits;
  Matrix deltas;
  // cosine classifier intermediates
  Vector z_norm;
  Matrix u;  // zc columns normalized
  Vector w_norm;
  Matrix w_hat;  // classifier rows normalized
};

/// RoI head and base learner on `rois`. Dropout is applied when `dropout_rng` is non-null and
/// rate > 0.
RoiTrace run_roi_head(const DetectorParams& p, const Matrix& features, std::vector<Box> rois, bool keep_taps,
                      double dropout_rate, Rng* dropout_rng);

Matrix image_to_input(const AnnotatedImage& image);

void check_image(const DetectorParams& p, const AnnotatedImage& image);

}  // namespace kifsod::detail
