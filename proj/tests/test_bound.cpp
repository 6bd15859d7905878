#include <gtest/gtest.h>

#include <cmath>

#include "ddr/bound.hpp"
#include "support.hpp"

using namespace ddr;

TEST(SoftThreshold, Values) {
  const Grid g({5});
  const Volume h(g, std::vector<double>{-2.0, -0.5, 0.0, 0.3, 1.5});
  const Volume s = soft_threshold(h, 0.5);
  const std::vector<double> expect{-1.5, 0.0, 0.0, 0.0, 1.0};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(s[i], expect[i]);
  EXPECT_TRUE(soft_threshold(h, 0.0) == h);
  EXPECT_THROW(soft_threshold(h, -0.1), InvalidInput);
  EXPECT_THROW(soft_threshold(h, NAN), InvalidInput);
}

TEST(SoftThreshold, Derivative) {
  const Grid g({5});
  const Volume h(g, std::vector<double>{-2.0, -0.5, 0.0, 0.3, 1.5});
  const Volume d = soft_threshold_deriv(h, 0.5);
  const std::vector<double> expect{1.0, 0.0, 0.0, 0.0, 1.0};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(d[i], expect[i]);
  // at t = 0 sigma is the identity, including at h = 0
  const Volume d0 = soft_threshold_deriv(h, 0.0);
  for (double x : d0.values()) EXPECT_EQ(x, 1.0);
}

TEST(GapIntegral, IsTwiceTheCostGap) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Grid g = seed % 2 ? Grid({6, 5, 4}, {1.0, 2.0, 0.5}) : Grid({9, 7});
    const Volume f = test::random_volume(g, seed), w = test::random_volume(g, seed + 100);
    const Volume h = test::random_volume(g, seed + 200, -0.5, 0.5);
    const double t = 0.1 * static_cast<double>(seed % 4);
    const double gap = gap_integral(h, t, f, w);
    EXPECT_NEAR(gap, 2.0 * (ub_ssd(f, soft_threshold(h, t), w) - ssd(f, w)), 1e-12);
  }
}

TEST(FitThreshold, BoundHoldsOnRandomInputs) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Grid g = seed % 2 ? Grid({5, 4, 6}) : Grid({10, 8}, {0.5, 1.5});
    const Volume f = test::random_volume(g, seed), w = test::random_volume(g, seed + 1000);
    const Volume h = test::random_volume(g, seed + 2000, -1.0, 1.0);
    const double C = ssd(f, w);
    const double eps = 1e-3 * C;
    const double step = 1e-3 * h.max_abs();
    const ThresholdFit fit = fit_threshold(h, f, w, eps, step);
    EXPECT_GE(fit.gap_integral, 0.0);
    EXPECT_LE(fit.gap_integral, eps);
    const double CU = ub_ssd(f, soft_threshold(h, fit.t), w);
    EXPECT_GE(2 * (CU - C), -1e-12 * (1 + C));
    EXPECT_LE(2 * (CU - C), eps + 1e-12 * (1 + C));
    EXPECT_LE(fit.evaluations, static_cast<std::size_t>(std::ceil(h.max_abs() / step)) + 1);
  }
}

TEST(FitThreshold, ZeroHeatmapStopsImmediately) {
  const Grid g({4, 4});
  const Volume f = test::random_volume(g, 1), w = test::random_volume(g, 2);
  const ThresholdFit fit = fit_threshold(Volume(g), f, w, 1e-6, 1.0);
  EXPECT_EQ(fit.t, 0.0);
  EXPECT_EQ(fit.gap_integral, 0.0);
  EXPECT_EQ(fit.evaluations, 1u);
}

TEST(FitThreshold, ReturnsFirstAdmissibleCandidate) {
  // h pushes the reference away from W everywhere: gap > 0 at t = 0 and shrinks as t grows.
  const Grid g({4});
  const Volume f(g, std::vector<double>{1, 1, 1, 1}), w(g, std::vector<double>{0, 0, 0, 0});
  const Volume h(g, std::vector<double>{0.4, 0.3, 0.2, 0.1});
  const double eps = 0.5;
  const ThresholdFit fit = fit_threshold(h, f, w, eps, 0.1);
  for (std::size_t k = 0; k + 1 < fit.evaluations; ++k) {
    const double gk = gap_integral(h, 0.1 * static_cast<double>(k), f, w);
    EXPECT_FALSE(gk >= 0.0 && gk <= eps);
  }
  EXPECT_LE(fit.gap_integral, eps);
  EXPECT_GE(fit.gap_integral, 0.0);
}

TEST(FitThreshold, RejectsBadArguments) {
  const Grid g({4, 4});
  const Volume v(g);
  EXPECT_THROW(fit_threshold(v, v, v, 0.0, 1.0), InvalidInput);
  EXPECT_THROW(fit_threshold(v, v, v, 1.0, 0.0), InvalidInput);
  EXPECT_THROW(fit_threshold(v, v, Volume(Grid({4, 5})), 1.0, 1.0), InvalidInput);
}

TEST(Alpha2, MatchesFiniteDifferencesOfTheUpperBound) {
  const Grid g({6, 6});
  const Volume f = test::random_volume(g, 5), w = test::random_volume(g, 6);
  Volume h = test::random_volume(g, 7, -1.0, 1.0);
  const double t = 0.3;
  const Volume a2 = alpha2(h, t, alpha1(f, soft_threshold(h, t), w));
  const double step = 1e-6;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (std::abs(std::abs(h[i]) - t) < 10 * step) continue;
    const double keep = h[i];
    h[i] = keep + step;
    const double up = ub_ssd(f, soft_threshold(h, t), w);
    h[i] = keep - step;
    const double dn = ub_ssd(f, soft_threshold(h, t), w);
    h[i] = keep;
    EXPECT_NEAR((up - dn) / (2 * step), a2[i], 1e-7);
  }
}
