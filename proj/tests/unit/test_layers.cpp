#include <gtest/gtest.h>

#include <random>

#include "kifsod/layers.hpp"

using namespace kifsod;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> d;
  return Matrix::NullaryExpr(r, c, [&]() { return d(rng); });
}

// Direct convolution over a (channels x H*W) map, weights laid out (out x (ky, kx, ch)).
Matrix naive_conv(const Matrix& in, const ConvGeometry& g, const Matrix& w) {
  Matrix out = Matrix::Zero(w.rows(), g.out_h() * g.out_w());
  for (int oy = 0; oy < g.out_h(); ++oy)
    for (int ox = 0; ox < g.out_w(); ++ox)
      for (int ky = 0; ky < g.kernel; ++ky)
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
          if (iy < 0 || ix < 0 || iy >= g.in_h || ix >= g.in_w) continue;
          for (int c = 0; c < g.in_ch; ++c)
            for (Eigen::Index o = 0; o < w.rows(); ++o)
              out(o, oy * g.out_w() + ox) += w(o, (ky * g.kernel + kx) * g.in_ch + c) * in(c, iy * g.in_w + ix);
        }
  return out;
}

}  // namespace

TEST(Im2col, GemmMatchesDirectConvolution) {
  for (const ConvGeometry g :
       {ConvGeometry{9, 7, 3, 3, 2, 1}, ConvGeometry{8, 8, 2, 3, 1, 1}, ConvGeometry{6, 5, 4, 1, 1, 0}}) {
    const Matrix in = random_matrix(g.in_ch, g.in_h * g.in_w, 1);
    const Matrix w = random_matrix(5, g.patch_size(), 2);
    const Matrix gemm = w * im2col(in, g);
    EXPECT_LT((gemm - naive_conv(in, g, w)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Im2col, OutputGeometry) {
  const ConvGeometry g{128, 128, 3, 3, 2, 1};
  EXPECT_EQ(g.out_h(), 64);
  EXPECT_EQ(g.out_w(), 64);
  EXPECT_EQ(g.patch_size(), 27);
}

TEST(Col2im, IsAdjointOfIm2col) {
  const ConvGeometry g{7, 9, 3, 3, 2, 1};
  const Matrix x = random_matrix(g.in_ch, g.in_h * g.in_w, 3);
  const Matrix y = random_matrix(g.patch_size(), g.out_h() * g.out_w(), 4);
  const double lhs = (im2col(x, g).array() * y.array()).sum();
  const double rhs = (x.array() * col2im(y, g).array()).sum();
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
}

TEST(RoiAlign, AffineMapGivesBinCenterValues) {
  // f(x, y) = a + b x + c y on pixel centers; bilinear sampling of an affine map is exact, so
  // each bin average equals f at the bin center.
  const int h = 16, w = 16, ch = 2;
  Matrix f(ch, h * w);
  const double a[2] = {0.3, -1.0}, b[2] = {0.25, 0.5}, c[2] = {-0.75, 0.125};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < ch; ++k) f(k, y * w + x) = a[k] + b[k] * x + c[k] * y;

  const std::vector<Box> rois{{16, 24, 64, 80}, {40.5, 10.25, 99, 51}};
  const RoiAlignSpec spec;
  const Matrix pooled = roi_align(f, h, w, rois, spec);
  ASSERT_EQ(pooled.rows(), 16 * ch);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const Box& roi = rois[r];
    const double bw = (roi.x1 - roi.x0) / 8.0 / 4.0, bh = (roi.y1 - roi.y0) / 8.0 / 4.0;
    for (int by = 0; by < 4; ++by)
      for (int bx = 0; bx < 4; ++bx) {
        const double xc = roi.x0 / 8.0 - 0.5 + (bx + 0.5) * bw;
        const double yc = roi.y0 / 8.0 - 0.5 + (by + 0.5) * bh;
        for (int k = 0; k < ch; ++k)
          EXPECT_NEAR(pooled((by * 4 + bx) * ch + k, static_cast<Eigen::Index>(r)), a[k] + b[k] * xc + c[k] * yc,
                      1e-12);
      }
  }
}

TEST(RoiAlign, BackwardIsAdjoint) {
  const int h = 16, w = 16, ch = 3;
  const Matrix f = random_matrix(ch, h * w, 5);
  const std::vector<Box> rois{{0, 0, 128, 128}, {3, 100, 40, 127}, {60, 60, 70, 75}};
  std::vector<std::vector<RoiTap>> taps;
  const Matrix pooled = roi_align(f, h, w, rois, {}, &taps);
  const Matrix g = random_matrix(pooled.rows(), pooled.cols(), 6);
  Matrix df = Matrix::Zero(ch, h * w);
  roi_align_backward(g, taps, ch, df);
  EXPECT_NEAR((pooled.array() * g.array()).sum(), (f.array() * df.array()).sum(), 1e-10);
}
