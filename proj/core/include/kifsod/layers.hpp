#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "kifsod/box.hpp"

namespace kifsod {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Feature maps are stored as (channels x height*width) column-major matrices: column p holds the
// channel vector of pixel p = y * width + x.

struct ConvGeometry {
  int in_h = 0, in_w = 0, in_ch = 0;
  int kernel = 3, stride = 1, pad = 0;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int patch_size() const { return kernel * kernel * in_ch; }
};

/// Patch matrix (kernel*kernel*in_ch x out_h*out_w); patch rows are ordered (ky, kx, channel).
Matrix im2col(const Matrix& input, const ConvGeometry& g);
/// Adjoint of im2col: scatters patch gradients back onto the input map.
Matrix col2im(const Matrix& cols, const ConvGeometry& g);

struct RoiAlignSpec {
  int pooled = 4;
  int sampling = 2;  // samples per bin side
  double spatial_scale = 1.0 / 8.0;
};

/// One bilinear tap: output bin `bin` accumulates `weight` x feature column `pixel`.
struct RoiTap {
  int bin;
  int pixel;
  double weight;
};

/// Average-sampled RoI-align. Returns (pooled*pooled*channels x rois) with rows ordered
/// (bin, channel). When `taps` is given it receives the per-RoI interpolation taps for backward.
Matrix roi_align(const Matrix& features, int height, int width, std::span<const Box> rois, const RoiAlignSpec& spec,
                 std::vector<std::vector<RoiTap>>* taps = nullptr);

/// Accumulates d(pooled) into d(features).
void roi_align_backward(const Matrix& grad_pooled, const std::vector<std::vector<RoiTap>>& taps, int channels,
                        Matrix& grad_features);

}  // namespace kifsod
