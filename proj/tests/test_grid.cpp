#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "ddr/grid.hpp"
#include "support.hpp"

using namespace ddr;

TEST(Grid, RejectsBadShapes) {
  EXPECT_THROW(Grid(std::vector<std::size_t>{}), InvalidInput);
  EXPECT_THROW(Grid({2, 2, 2, 2}), InvalidInput);
  EXPECT_THROW(Grid({4, 0}), InvalidInput);
  EXPECT_THROW(Grid({4, 4}, {1.0}), InvalidInput);
  EXPECT_THROW(Grid({4, 4}, {1.0, -2.0}), InvalidInput);
}

TEST(Grid, LastAxisIsFastest) {
  const Grid g({3, 4, 5}, {1.0, 2.0, 0.5});
  EXPECT_EQ(g.size(), 60u);
  EXPECT_EQ(g.index(0, 0, 1), 1u);
  EXPECT_EQ(g.index(0, 1, 0), 5u);
  EXPECT_EQ(g.index(1, 0, 0), 20u);
  EXPECT_DOUBLE_EQ(g.voxel_volume(), 1.0);
  const Grid g2({6, 7});
  EXPECT_EQ(g2.ext3()[0], 1u);
  EXPECT_EQ(g2.axis3(0), 1);
  EXPECT_EQ(g2.axis3(1), 2);
}

TEST(Grid, VectorFieldFlattenRoundTrip) {
  const Grid g({4, 6});
  const VectorField f = test::random_field(g, 3, 2.0);
  VectorField h(g);
  h.assign_flat(f.flatten());
  EXPECT_TRUE(h == f);
  EXPECT_EQ(f.flatten().size(), 2 * g.size());
}

TEST(SampleLinear, NodesAndMidpoints) {
  const Grid g({5, 6});
  const Volume v = test::random_volume(g, 1);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      const double p[2] = {double(i), double(j)};
      EXPECT_EQ(sample_linear(v, p), v[g.index(0, i, j)]);
    }
  const double mid[2] = {1.5, 2.5};
  const double expect = 0.25 * (v[g.index(0, 1, 2)] + v[g.index(0, 1, 3)] + v[g.index(0, 2, 2)] + v[g.index(0, 2, 3)]);
  EXPECT_NEAR(sample_linear(v, mid), expect, 1e-15);
}

TEST(SampleLinear, BilinearFormulaAtRandomPoints) {
  const Grid g({7, 9});
  const Volume v = test::random_volume(g, 2);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(0.0, 6.0), uy(0.0, 8.0);
  for (int n = 0; n < 100; ++n) {
    const double x = ux(rng), y = uy(rng);
    const auto i = static_cast<std::size_t>(std::floor(x)), j = static_cast<std::size_t>(std::floor(y));
    const std::size_t i1 = std::min<std::size_t>(i + 1, 6), j1 = std::min<std::size_t>(j + 1, 8);
    const double fx = x - double(i), fy = y - double(j);
    const double expect = (1 - fx) * (1 - fy) * v[g.index(0, i, j)] + (1 - fx) * fy * v[g.index(0, i, j1)] +
                          fx * (1 - fy) * v[g.index(0, i1, j)] + fx * fy * v[g.index(0, i1, j1)];
    const double p[2] = {x, y};
    EXPECT_NEAR(sample_linear(v, p), expect, 1e-14);
  }
}

TEST(SampleLinear, ReproducesAffineFunctionsIn3D) {
  const Grid g({4, 5, 6});
  Volume v(g);
  detail::for_each_voxel(g, [&](std::size_t l, std::array<double, 3> p) { v[l] = 0.5 + 2 * p[0] - p[1] + 0.25 * p[2]; });
  const double p[3] = {1.3, 2.7, 4.1};
  EXPECT_NEAR(sample_linear(v, p), 0.5 + 2.6 - 2.7 + 1.025, 1e-13);
}

TEST(SampleLinear, ClampsOutsideTheGrid) {
  const Grid g({4, 4});
  const Volume v = test::random_volume(g, 7);
  const double far[2] = {-10.0, 20.0};
  EXPECT_EQ(sample_linear(v, far), v[g.index(0, 0, 3)]);
  const double edge[2] = {3.0, -0.5};
  EXPECT_EQ(sample_linear(v, edge), v[g.index(0, 3, 0)]);
  const double wrong_rank[3] = {0, 0, 0};
  EXPECT_THROW(sample_linear(v, wrong_rank), InvalidInput);
}

TEST(Warp, ZeroDisplacementIsIdentity) {
  const Grid g({6, 5, 4});
  const Volume v = test::random_volume(g, 11);
  EXPECT_TRUE(warp(v, VectorField(g)) == v);
}

TEST(Warp, IntegerShift) {
  const Grid g({8, 8});
  const Volume v = test::random_volume(g, 12);
  VectorField u(g);
  for (double& x : u[1].values()) x = 2.0;
  const Volume w = warp(v, u);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j + 2 < 8; ++j) EXPECT_EQ(w[g.index(0, i, j)], v[g.index(0, i, j + 2)]);
  EXPECT_THROW(warp(v, VectorField(Grid({8, 7}))), InvalidInput);
}

TEST(Gradient, AffineRampIsExactIncludingBorders) {
  const Grid g({5, 6}, {2.0, 0.5});
  Volume v(g);
  detail::for_each_voxel(g, [&](std::size_t l, std::array<double, 3> p) { v[l] = 3.0 * p[1] * 2.0 - 1.5 * p[2] * 0.5; });
  const VectorField d = gradient(v);
  for (std::size_t l = 0; l < g.size(); ++l) {
    EXPECT_NEAR(d[0][l], 3.0, 1e-12);
    EXPECT_NEAR(d[1][l], -1.5, 1e-12);
  }
  EXPECT_THROW(gradient(Volume(Grid({1, 5}))), InvalidInput);
}

TEST(Gradient, CentralDifferenceInterior) {
  const Grid g({6, 6, 6});
  const Volume v = test::random_volume(g, 13);
  const VectorField d = gradient(v);
  EXPECT_DOUBLE_EQ(d[0][g.index(2, 3, 4)], 0.5 * (v[g.index(3, 3, 4)] - v[g.index(1, 3, 4)]));
  EXPECT_DOUBLE_EQ(d[2][g.index(2, 3, 0)], v[g.index(2, 3, 1)] - v[g.index(2, 3, 0)]);
}

// Direct 2D convolution with a clamped-edge Gaussian of the same radius.
static Volume naive_smooth_2d(const Volume& v, double sigma) {
  const Grid& g = v.grid();
  const long r = static_cast<long>(std::ceil(3 * sigma));
  const long n0 = static_cast<long>(g.dim(0)), n1 = static_cast<long>(g.dim(1));
  double norm = 0.0;
  for (long q = -r; q <= r; ++q) norm += std::exp(-0.5 * q * q / (sigma * sigma));
  Volume out(g);
  for (long i = 0; i < n0; ++i)
    for (long j = 0; j < n1; ++j) {
      double s = 0.0;
      for (long a = -r; a <= r; ++a)
        for (long b = -r; b <= r; ++b) {
          const double w = std::exp(-0.5 * (a * a + b * b) / (sigma * sigma)) / (norm * norm);
          const long ii = std::clamp(i + a, 0L, n0 - 1), jj = std::clamp(j + b, 0L, n1 - 1);
          s += w * v[g.index(0, std::size_t(ii), std::size_t(jj))];
        }
      out[g.index(0, std::size_t(i), std::size_t(j))] = s;
    }
  return out;
}

TEST(GaussianSmooth, MatchesDirectConvolution) {
  const Grid g({12, 9});
  const Volume v = test::random_volume(g, 14);
  for (double sigma : {0.7, 1.0, 2.3}) {
    const Volume a = gaussian_smooth(v, sigma);
    const Volume b = naive_smooth_2d(v, sigma);
    for (std::size_t l = 0; l < g.size(); ++l) EXPECT_NEAR(a[l], b[l], 1e-13) << "sigma " << sigma;
  }
}

TEST(GaussianSmooth, ConstantsAndSigmaZero) {
  const Grid g({5, 6, 7});
  const Volume c(g, 2.5);
  const Volume s = gaussian_smooth(c, 1.7);
  for (double x : s.values()) EXPECT_NEAR(x, 2.5, 1e-14);
  const Volume v = test::random_volume(g, 15);
  EXPECT_TRUE(gaussian_smooth(v, 0.0) == v);
  const std::vector<double> sig{0.0, 1.0, 0.0};
  const Volume only_mid = gaussian_smooth(v, sig);
  const std::vector<double> bad{1.0, 1.0};
  EXPECT_THROW(gaussian_smooth(v, bad), InvalidInput);
  EXPECT_THROW(gaussian_smooth(v, -1.0), InvalidInput);
  // smoothing only axis 1 leaves lines along it independent
  Volume v2 = v;
  v2[g.index(0, 0, 0)] += 1.0;
  const Volume o2 = gaussian_smooth(v2, sig);
  EXPECT_EQ(o2[g.index(1, 0, 0)], only_mid[g.index(1, 0, 0)]);
  EXPECT_NE(o2[g.index(0, 1, 0)], only_mid[g.index(0, 1, 0)]);
}

TEST(Compose, IdentityAndTranslations) {
  const Grid g({10, 10});
  const VectorField u = test::smooth_random_field(g, 16, 2.0, 1.5);
  const VectorField zero(g);
  EXPECT_TRUE(compose(zero, u) == u);
  EXPECT_TRUE(compose(u, zero) == u);

  VectorField a(g), b(g);
  for (double& x : a[0].values()) x = 0.5;
  for (double& x : b[1].values()) x = -1.25;
  const VectorField ab = compose(a, b);
  for (std::size_t i = 2; i < 8; ++i)
    for (std::size_t j = 2; j < 8; ++j) {
      EXPECT_DOUBLE_EQ(ab[0][g.index(0, i, j)], 0.5);
      EXPECT_DOUBLE_EQ(ab[1][g.index(0, i, j)], -1.25);
    }
}

TEST(Compose, WarpOfComposedEqualsSequentialWarps) {
  // (id+outer)o(id+inner): warping by the composition matches warping by outer then by inner
  // for an affine image, where interpolation is exact.
  const Grid g({16, 16});
  Volume v(g);
  detail::for_each_voxel(g, [&](std::size_t l, std::array<double, 3> p) { v[l] = 0.3 * p[1] - 0.2 * p[2]; });
  VectorField outer(g), inner(g);
  for (double& x : outer[0].values()) x = 0.4;
  for (double& x : inner[1].values()) x = 0.7;
  const Volume once = warp(v, compose(outer, inner));
  const Volume twice = warp(warp(v, outer), inner);
  for (std::size_t i = 1; i < 14; ++i)
    for (std::size_t j = 1; j < 14; ++j) EXPECT_NEAR(once[g.index(0, i, j)], twice[g.index(0, i, j)], 1e-12);
}

TEST(MinJacobianDet, KnownFields) {
  const Grid g({8, 8});
  EXPECT_DOUBLE_EQ(min_jacobian_det(VectorField(g)), 1.0);
  VectorField lin(g);
  detail::for_each_voxel(g, [&](std::size_t l, std::array<double, 3> p) {
    lin[0][l] = 0.2 * p[1];
    lin[1][l] = -0.5 * p[2];
  });
  EXPECT_NEAR(min_jacobian_det(lin), 1.2 * 0.5, 1e-12);
  VectorField fold(g);
  detail::for_each_voxel(g, [&](std::size_t l, std::array<double, 3> p) { fold[0][l] = -2.0 * p[1]; });
  EXPECT_LT(min_jacobian_det(fold), 0.0);

  const Grid g3({5, 5, 5});
  VectorField shear(g3);
  detail::for_each_voxel(g3, [&](std::size_t l, std::array<double, 3> p) { shear[0][l] = 0.7 * p[2]; });
  EXPECT_NEAR(min_jacobian_det(shear), 1.0, 1e-12);
}
