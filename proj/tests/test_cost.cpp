#include <gtest/gtest.h>

#include <cmath>

#include "ddr/cost.hpp"
#include "support.hpp"

using namespace ddr;

TEST(Ssd, MatchesHandSum) {
  const Grid g({3, 4}, {2.0, 0.5});
  const Volume f = test::random_volume(g, 1), w = test::random_volume(g, 2);
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += (f[i] - w[i]) * (f[i] - w[i]);
  EXPECT_NEAR(ssd(f, w), 0.5 * s * 1.0, 1e-14);
  EXPECT_EQ(ssd(f, f), 0.0);
  EXPECT_THROW(ssd(f, Volume(Grid({4, 3}))), InvalidInput);
}

TEST(UbSsd, ZeroHeatmapGivesSsdExactly) {
  const Grid g({6, 5, 4});
  const Volume f = test::random_volume(g, 3), w = test::random_volume(g, 4);
  EXPECT_EQ(ub_ssd(f, Volume(g), w), ssd(f, w));
}

TEST(UbSsd, ShiftsTheFixedImage) {
  const Grid g({5, 5});
  const Volume f = test::random_volume(g, 5), w = test::random_volume(g, 6), h = test::random_volume(g, 7, -0.2, 0.2);
  EXPECT_NEAR(ub_ssd(f, h, w), ssd(f + h, w), 1e-14);
  const Volume a = alpha1(f, h, w);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(a[i], f[i] + h[i] - w[i], 1e-15);
}

TEST(Energy, RegularizerOfAffineField) {
  // u_0 = 0.3 * y on a 6x6 grid with spacing 2 along y: each node has d u_0/dy = 0.15.
  const Grid g({6, 6}, {1.0, 2.0});
  VectorField u(g);
  detail::for_each_voxel(g, [&](std::size_t l, std::array<double, 3> p) { u[0][l] = 0.3 * p[2]; });
  const Volume img(g, 0.5);
  const double e = energy(img, Volume(g), img, u, 2.0);
  EXPECT_NEAR(e, 2.0 * 0.5 * 36 * 0.15 * 0.15 * 2.0, 1e-12);
  EXPECT_THROW(energy(img, Volume(g), img, u, -1.0), InvalidInput);
}

// Central differences of the energy over displacement entries; entries whose
// sample point crosses a cell boundary within the step are skipped because the
// interpolant has kinks there.
static void check_energy_gradient(const Grid& g, std::uint64_t seed, double lambda) {
  const Volume f = test::smooth_random_volume(g, seed, 1.0);
  const Volume m = test::smooth_random_volume(g, seed + 1, 1.0);
  const Volume h = test::random_volume(g, seed + 2, -0.1, 0.1);
  VectorField u = test::random_field(g, seed + 3, 1.3);
  const VectorField grad = energy_gradient(f, h, m, u, lambda);
  const double step = 1e-4;
  const int off = 3 - g.rank();
  int checked = 0;
  for (int c = 0; c < u.components(); ++c)
    for (std::size_t l = 0; l < g.size(); l += 3) {
      std::array<double, 3> p{};
      detail::for_each_voxel(g, [&](std::size_t k, std::array<double, 3> q) {
        if (k == l) p = q;
      });
      const double x = p[off + c] + u[c][l];
      const double n = static_cast<double>(g.dim(c));
      if (std::floor(x - step) != std::floor(x + step) || x - step < 0.0 || x + step > n - 1) continue;
      const double keep = u[c][l];
      u[c][l] = keep + step;
      const double ep = energy(f, h, m, u, lambda);
      u[c][l] = keep - step;
      const double em = energy(f, h, m, u, lambda);
      u[c][l] = keep;
      const double fd = (ep - em) / (2 * step);
      const double scale = std::max({std::abs(fd), std::abs(grad[c][l]), 1e-6});
      EXPECT_LT(std::abs(fd - grad[c][l]) / scale, 1e-4) << "component " << c << " voxel " << l;
      ++checked;
    }
  EXPECT_GT(checked, 10);
}

TEST(EnergyGradient, FiniteDifferences2D) { check_energy_gradient(Grid({9, 8}, {1.0, 1.5}), 10, 0.0); }
TEST(EnergyGradient, FiniteDifferences2DWithRegularizer) { check_energy_gradient(Grid({9, 8}), 20, 0.7); }
TEST(EnergyGradient, FiniteDifferences3DWithRegularizer) {
  check_energy_gradient(Grid({5, 6, 5}, {1.0, 0.8, 1.2}), 30, 0.3);
}

TEST(CostReport, Consistent) {
  const Grid g({8, 8});
  const Volume f = test::random_volume(g, 40), m = test::random_volume(g, 41);
  const Volume h = test::random_volume(g, 42, -0.1, 0.1);
  const VectorField u = test::random_field(g, 43, 0.5);
  const CostReport r = cost_report(f, h, m, u, 0.5);
  EXPECT_DOUBLE_EQ(r.ssd, ssd(f, warp(m, u)));
  EXPECT_DOUBLE_EQ(r.ub_ssd, ub_ssd(f, h, warp(m, u)));
  EXPECT_DOUBLE_EQ(r.gap, r.ub_ssd - r.ssd);
  EXPECT_GE(r.energy, r.ub_ssd);
}
