#pragma once

// Soft thresholding of the network heatmap and the threshold search that
// keeps the perturbed cost a tight upper bound of the SSD:
//
//   0 <= sum sigma_t(h) * (sigma_t(h) + 2 (F - W)) dV <= epsilon
//
// The left-hand integral equals 2 (C_U - C).

#include <cmath>
#include <cstddef>

#include "ddr/cost.hpp"
#include "ddr/grid.hpp"

namespace ddr {

struct BoundState {
  double t = 0.0;
  double epsilon = 0.0;
  double stepsize = 0.0;
  double max_t = 0.0;  // max|h|; the scan never needs to go past it
};

struct ThresholdFit {
  double t = 0.0;
  double gap_integral = 0.0;
  std::size_t evaluations = 0;  // thresholds tried, including t = 0
};

namespace detail {

inline double soft_threshold_scalar(double z, double t) noexcept {
  if (z >= t) return z - t;
  if (z <= -t) return z + t;
  return 0.0;
}

inline void require_threshold(double t) {
  require(t >= 0.0 && std::isfinite(t), "threshold must be a finite value >= 0");
}

}  // namespace detail

inline Volume soft_threshold(const Volume& h, double t) {
  detail::require_threshold(t);
  Volume out(h.grid());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = detail::soft_threshold_scalar(h[i], t);
  return out;
}

/// 1 where |z| > t, 0 inside the dead zone and on the kinks. At t = 0 the
/// map is the identity and the derivative is 1 everywhere.
inline Volume soft_threshold_deriv(const Volume& h, double t) {
  detail::require_threshold(t);
  Volume out(h.grid());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = (t == 0.0 || std::abs(h[i]) > t) ? 1.0 : 0.0;
  return out;
}

/// sum sigma_t(h) (sigma_t(h) + 2 (F - W)) dV
inline double gap_integral(const Volume& h, double t, const Volume& fixed, const Volume& moving_warped) {
  detail::require_threshold(t);
  detail::require_same_dims(h.grid(), fixed.grid(), "gap_integral");
  detail::require_same_dims(h.grid(), moving_warped.grid(), "gap_integral");
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double sg = detail::soft_threshold_scalar(h[i], t);
    if (sg != 0.0) s += sg * (sg + 2.0 * (fixed[i] - moving_warped[i]));
  }
  return s * h.grid().voxel_volume();
}

/// Linear scan t = 0, dt, 2 dt, ... returning the first threshold with
/// 0 <= gap_integral <= epsilon. The last candidate is clamped up to max|h|,
/// where sigma vanishes and the integral is exactly 0, so the scan always
/// stops within ceil(max|h| / dt) + 1 evaluations.
inline ThresholdFit fit_threshold(const Volume& h, const Volume& fixed, const Volume& moving_warped,
                                  double epsilon, double stepsize) {
  detail::require(epsilon > 0.0 && std::isfinite(epsilon), "fit_threshold: epsilon must be positive");
  detail::require(stepsize > 0.0 && std::isfinite(stepsize), "fit_threshold: stepsize must be positive");
  detail::require_same_dims(h.grid(), fixed.grid(), "fit_threshold");
  detail::require_same_dims(h.grid(), moving_warped.grid(), "fit_threshold");
  const double max_h = h.max_abs();
  const auto last = static_cast<std::size_t>(std::ceil(max_h / stepsize));
  ThresholdFit fit;
  for (std::size_t k = 0;; ++k) {
    double t = static_cast<double>(k) * stepsize;
    if (k >= last) t = std::max(t, max_h);
    const double g = gap_integral(h, t, fixed, moving_warped);
    fit.evaluations = k + 1;
    if (g >= 0.0 && g <= epsilon) {
      fit.t = t;
      fit.gap_integral = g;
      return fit;
    }
  }
}

/// alpha2 = sigma'(h) * alpha1
inline Volume alpha2(const Volume& h, double t, const Volume& a1) {
  detail::require_same_dims(h.grid(), a1.grid(), "alpha2");
  Volume out = soft_threshold_deriv(h, t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= a1[i];
  return out;
}

}  // namespace ddr
