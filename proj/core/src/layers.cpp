#include "kifsod/layers.hpp"

#include <cmath>

namespace kifsod {

Matrix im2col(const Matrix& input, const ConvGeometry& g) {
  const int oh = g.out_h(), ow = g.out_w(), c = g.in_ch;
  Matrix cols = Matrix::Zero(g.patch_size(), oh * ow);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const int p = oy * ow + ox;
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.in_h) continue;
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.in_w) continue;
          cols.block((ky * g.kernel + kx) * c, p, c, 1) = input.col(iy * g.in_w + ix);
        }
      }
    }
  }
  return cols;
}

Matrix col2im(const Matrix& cols, const ConvGeometry& g) {
  const int oh = g.out_h(), ow = g.out_w(), c = g.in_ch;
  Matrix out = Matrix::Zero(c, g.in_h * g.in_w);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const int p = oy * ow + ox;
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.in_h) continue;
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.in_w) continue;
          out.col(iy * g.in_w + ix) += cols.block((ky * g.kernel + kx) * c, p, c, 1);
        }
      }
    }
  }
  return out;
}

namespace {

// Bilinear taps for a sample at (y, x) in feature-map coordinates, detectron2 "aligned" convention.
// Samples more than one cell outside the map contribute nothing.
int bilinear_taps(double y, double x, int h, int w, int (&pix)[4], double (&wt)[4]) {
  if (y < -1.0 || y > h || x < -1.0 || x > w) return 0;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  int y1, x1;
  if (y0 >= h - 1) {
    y0 = y1 = h - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= w - 1) {
    x0 = x1 = w - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - y0, lx = x - x0, hy = 1.0 - ly, hx = 1.0 - lx;
  pix[0] = y0 * w + x0;
  pix[1] = y0 * w + x1;
  pix[2] = y1 * w + x0;
  pix[3] = y1 * w + x1;
  wt[0] = hy * hx;
  wt[1] = hy * lx;
  wt[2] = ly * hx;
  wt[3] = ly * lx;
  return 4;
}

}  // namespace

Matrix roi_align(const Matrix& features, int height, int width, std::span<const Box> rois, const RoiAlignSpec& spec,
                 std::vector<std::vector<RoiTap>>* taps) {
  const int c = static_cast<int>(features.rows());
  const int bins = spec.pooled * spec.pooled;
  const int s = spec.sampling;
  Matrix out = Matrix::Zero(bins * c, static_cast<Eigen::Index>(rois.size()));
  if (taps) taps->assign(rois.size(), {});

  for (std::size_t r = 0; r < rois.size(); ++r) {
    const Box& b = rois[r];
    const double x0 = b.x0 * spec.spatial_scale - 0.5;
    const double y0 = b.y0 * spec.spatial_scale - 0.5;
    const double bin_w = (b.x1 - b.x0) * spec.spatial_scale / spec.pooled;
    const double bin_h = (b.y1 - b.y0) * spec.spatial_scale / spec.pooled;
    const double norm = 1.0 / (s * s);
    std::vector<RoiTap> local;
    local.reserve(static_cast<std::size_t>(bins * s * s * 4));
    for (int by = 0; by < spec.pooled; ++by) {
      for (int bx = 0; bx < spec.pooled; ++bx) {
        const int bin = by * spec.pooled + bx;
        for (int sy = 0; sy < s; ++sy) {
          const double y = y0 + by * bin_h + (sy + 0.5) * bin_h / s;
          for (int sx = 0; sx < s; ++sx) {
            const double x = x0 + bx * bin_w + (sx + 0.5) * bin_w / s;
            int pix[4];
            double wt[4];
            const int n = bilinear_taps(y, x, height, width, pix, wt);
            for (int t = 0; t < n; ++t) {
              const double w = wt[t] * norm;
              if (w == 0.0) continue;
              out.block(bin * c, static_cast<Eigen::Index>(r), c, 1) += w * features.col(pix[t]);
              local.push_back({bin, pix[t], w});
            }
          }
        }
      }
    }
    if (taps) (*taps)[r] = std::move(local);
  }
  return out;
}

void roi_align_backward(const Matrix& grad_pooled, const std::vector<std::vector<RoiTap>>& taps, int channels,
                        Matrix& grad_features) {
  for (std::size_t r = 0; r < taps.size(); ++r) {
    for (const RoiTap& t : taps[r]) {
      grad_features.col(t.pixel) +=
          t.weight * grad_pooled.block(t.bin * channels, static_cast<Eigen::Index>(r), channels, 1);
    }
  }
}

}  // namespace kifsod
