#pragma once

// SSD registration cost, its heatmap-perturbed upper-bound surrogate, the
// regularized registration energy and their image-space gradients.
//
// Integrals are voxel sums times voxel volume. Sums run in linear index
// order so results are reproducible bit-for-bit.

#include <cstddef>

#include "ddr/grid.hpp"

namespace ddr {

struct CostReport {
  double ssd = 0.0;     // C
  double ub_ssd = 0.0;  // C_U
  double energy = 0.0;  // E
  double gap = 0.0;     // C_U - C
};

/// C = 1/2 sum (F - W)^2 dV
inline double ssd(const Volume& fixed, const Volume& moving_warped) {
  detail::require_same_dims(fixed.grid(), moving_warped.grid(), "ssd");
  double s = 0.0;
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    const double d = fixed[i] - moving_warped[i];
    s += d * d;
  }
  return 0.5 * s * fixed.grid().voxel_volume();
}

/// C_U = 1/2 sum (F + h_m - W)^2 dV
inline double ub_ssd(const Volume& fixed, const Volume& heat_mod, const Volume& moving_warped) {
  detail::require_same_dims(fixed.grid(), heat_mod.grid(), "ub_ssd");
  detail::require_same_dims(fixed.grid(), moving_warped.grid(), "ub_ssd");
  double s = 0.0;
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    const double d = (fixed[i] + heat_mod[i]) - moving_warped[i];
    s += d * d;
  }
  return 0.5 * s * fixed.grid().voxel_volume();
}

/// Residual F + h_m - W, the derivative of C_U with respect to h_m per unit voxel volume.
inline Volume alpha1(const Volume& fixed, const Volume& heat_mod, const Volume& moving_warped) {
  detail::require_same_dims(fixed.grid(), heat_mod.grid(), "alpha1");
  detail::require_same_dims(fixed.grid(), moving_warped.grid(), "alpha1");
  Volume out(fixed.grid());
  for (std::size_t i = 0; i < fixed.size(); ++i) out[i] = (fixed[i] + heat_mod[i]) - moving_warped[i];
  return out;
}

namespace detail {

inline void check_energy_args(const Volume& fixed, const Volume& heat_mod, const Volume& moving,
                              const VectorField& disp, double lambda) {
  require_same_dims(fixed.grid(), heat_mod.grid(), "energy");
  require_same_dims(fixed.grid(), moving.grid(), "energy");
  require_same_dims(fixed.grid(), disp.grid(), "energy");
  require(lambda >= 0.0 && std::isfinite(lambda), "energy: lambda must be a finite value >= 0");
}

/// 1/2 sum_c sum_axes |d u_c / d axis|^2 dV, derivatives in physical units.
inline double regularizer(const VectorField& disp) {
  const Grid& g = disp.grid();
  double s = 0.0;
  for (int c = 0; c < disp.components(); ++c)
    for (int a = 0; a < g.rank(); ++a) {
      if (g.dim(a) < 2) continue;
      const Volume d = diff_axis(disp[c], g.axis3(a), g.spacing(a));
      for (double v : d.values()) s += v * v;
    }
  return 0.5 * s * g.voxel_volume();
}

}  // namespace detail

/// E = 1/2 sum [(F + h_m - M(x+u))^2 + lambda |grad u|^2] dV
inline double energy(const Volume& fixed, const Volume& heat_mod, const Volume& moving, const VectorField& disp,
                     double lambda) {
  detail::check_energy_args(fixed, heat_mod, moving, disp, lambda);
  const double data = ub_ssd(fixed, heat_mod, warp(moving, disp));
  if (lambda == 0.0) return data;
  return data + lambda * detail::regularizer(disp);
}

/// dE/du per voxel and component. The data term uses the exact derivative of
/// the multilinear interpolant at x+u; the regularizer term is the adjoint of
/// the difference operator used in energy().
inline VectorField energy_gradient(const Volume& fixed, const Volume& heat_mod, const Volume& moving,
                                   const VectorField& disp, double lambda) {
  detail::check_energy_args(fixed, heat_mod, moving, disp, lambda);
  const Grid& g = fixed.grid();
  const double dv = g.voxel_volume();
  const int off = 3 - g.rank();
  VectorField out(g);
  detail::for_each_voxel(g, [&](std::size_t l, std::array<double, 3> p) {
    std::array<double, 3> d3{};
    const double w = detail::sample_with_derivative(moving, detail::displaced(disp, l, p), d3);
    const double r = (fixed[l] + heat_mod[l]) - w;
    for (int c = 0; c < g.rank(); ++c) out[c][l] = -r * d3[off + c] * dv;
  });
  if (lambda > 0.0) {
    for (int c = 0; c < g.rank(); ++c)
      for (int a = 0; a < g.rank(); ++a) {
        if (g.dim(a) < 2) continue;
        const int a3 = g.axis3(a);
        const Volume lap = detail::diff_axis_adjoint(detail::diff_axis(disp[c], a3, g.spacing(a)), a3, g.spacing(a));
        for (std::size_t i = 0; i < g.size(); ++i) out[c][i] += lambda * dv * lap[i];
      }
  }
  return out;
}

inline CostReport cost_report(const Volume& fixed, const Volume& heat_mod, const Volume& moving,
                              const VectorField& disp, double lambda) {
  const Volume warped = warp(moving, disp);
  CostReport r;
  r.ssd = ssd(fixed, warped);
  r.ub_ssd = ub_ssd(fixed, heat_mod, warped);
  r.energy = energy(fixed, heat_mod, moving, disp, lambda);
  r.gap = r.ub_ssd - r.ssd;
  return r;
}

}  // namespace ddr
