#pragma once

// Image similarity metrics used to score registrations: SSIM, PSNR and mean
// squared difference, plus the percentage-improvement helper used in the
// with/without comparison tables.

#include <cmath>
#include <limits>
#include <vector>

#include "ddr/grid.hpp"

namespace ddr {

struct MetricsReport {
  double ssim = 0.0;
  double psnr = 0.0;  // +inf when the images are identical
  double mean_ssd = 0.0;
  double dynamic_range = 1.0;

  bool psnr_infinite() const noexcept { return std::isinf(psnr); }
};

inline double mean_ssd(const Volume& a, const Volume& b) {
  detail::require_same_dims(a.grid(), b.grid(), "mean_ssd");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// 10 log10(L^2 / MSE); +infinity when MSE < 1e-300.
inline double psnr(const Volume& a, const Volume& b, double L = 1.0) {
  detail::require(L > 0.0, "psnr: dynamic range must be positive");
  const double mse = mean_ssd(a, b);
  if (mse < 1e-300) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(L * L / mse);
}

namespace detail {

/// Gaussian-weighted local mean; the window is renormalized over its
/// in-bounds support. That support is a box, so the weights factor per axis.
inline Volume local_mean(const Volume& v, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const long r = static_cast<long>(kernel.size() / 2);
  Volume out = v;
  std::vector<double> line;
  for (int a = 0; a < v.rank(); ++a) {
    for_each_line(v.grid().ext3(), v.grid().axis3(a), [&](std::size_t base, std::size_t st, std::size_t n) {
      line.resize(n);
      for (std::size_t i = 0; i < n; ++i) line[i] = out[base + i * st];
      for (long i = 0; i < static_cast<long>(n); ++i) {
        double s = 0.0, w = 0.0;
        for (long q = std::max(-r, -i); q <= std::min(r, static_cast<long>(n) - 1 - i); ++q) {
          const double k = kernel[static_cast<std::size_t>(q + r)];
          s += k * line[static_cast<std::size_t>(i + q)];
          w += k;
        }
        out[base + static_cast<std::size_t>(i) * st] = s / w;
      }
    });
  }
  return out;
}

}  // namespace detail

/// Mean of the local SSIM map, Gaussian window (sigma in voxels), K1 = 0.01, K2 = 0.03.
inline double ssim(const Volume& a, const Volume& b, double window_sigma = 1.5, double L = 1.0) {
  detail::require_same_dims(a.grid(), b.grid(), "ssim");
  detail::require(L > 0.0, "ssim: dynamic range must be positive");
  detail::require(window_sigma > 0.0, "ssim: window sigma must be positive");
  const double c1 = (0.01 * L) * (0.01 * L);
  const double c2 = (0.03 * L) * (0.03 * L);
  Volume aa(a.grid()), bb(a.grid()), ab(a.grid());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const Volume mu_a = detail::local_mean(a, window_sigma);
  const Volume mu_b = detail::local_mean(b, window_sigma);
  const Volume m_aa = detail::local_mean(aa, window_sigma);
  const Volume m_bb = detail::local_mean(bb, window_sigma);
  const Volume m_ab = detail::local_mean(ab, window_sigma);
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cov = m_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    total += num / den;
  }
  return total / static_cast<double>(a.size());
}

inline MetricsReport compute_metrics(const Volume& a, const Volume& b, double L = 1.0, double window_sigma = 1.5) {
  MetricsReport r;
  r.ssim = ssim(a, b, window_sigma, L);
  r.psnr = psnr(a, b, L);
  r.mean_ssd = mean_ssd(a, b);
  r.dynamic_range = L;
  return r;
}

/// Percentage improvement of `improved` over `baseline`; sign flips for lower-is-better metrics.
inline double improvement_percent(double baseline, double improved, bool higher_is_better) {
  detail::require(baseline != 0.0, "improvement_percent: baseline must be non-zero");
  return higher_is_better ? 100.0 * (improved - baseline) / baseline : 100.0 * (baseline - improved) / baseline;
}

}  // namespace ddr
