#pragma once

// Seeded synthetic registration pairs: a rendered pattern, a smooth random
// ground-truth displacement, and the pattern warped by it.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "ddr/fcnn.hpp"
#include "ddr/grid.hpp"

namespace ddr {

enum class Pattern { blobs, checker };

inline Pattern parse_pattern(const std::string& s) {
  if (s == "blobs") return Pattern::blobs;
  if (s == "checker") return Pattern::checker;
  throw InvalidInput("unknown synth pattern '" + s + "' (expected blobs or checker)");
}

inline const char* pattern_name(Pattern p) { return p == Pattern::blobs ? "blobs" : "checker"; }

struct SynthSpec {
  Pattern pattern = Pattern::blobs;
  std::vector<std::size_t> dims{64, 64};
  double warp_amplitude = 3.0;   // voxels, max displacement norm
  double warp_smoothness = 8.0;  // sigma of the random field, voxels
  std::uint64_t seed = 1;
};

struct SynthPair {
  Volume fixed;
  Volume moving;
  VectorField truth;
};

namespace detail {

inline double normal(SplitMix64& rng) {
  const double u1 = std::max(rng.uniform(), 1e-300);
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline void to_unit_range(Volume& v) {
  const double lo = v.min(), hi = v.max();
  if (hi > lo)
    for (double& x : v.values()) x = (x - lo) / (hi - lo);
  else
    for (double& x : v.values()) x = 0.0;
}

inline Volume render_pattern(const Grid& g, Pattern p, SplitMix64& rng) {
  Volume v(g);
  const int r = g.rank();
  const int off = 3 - r;
  if (p == Pattern::blobs) {
    const int count = r == 3 ? 10 : 6;
    double min_dim = 1e300;
    for (int a = 0; a < r; ++a) min_dim = std::min(min_dim, static_cast<double>(g.dim(a)));
    for (int b = 0; b < count; ++b) {
      std::array<double, 3> c{0, 0, 0};
      for (int a = 0; a < r; ++a) c[off + a] = (0.2 + 0.6 * rng.uniform()) * static_cast<double>(g.dim(a) - 1);
      const double sigma = min_dim * (1.0 / 16.0 + rng.uniform() * (1.0 / 6.0 - 1.0 / 16.0));
      const double amp = 0.4 + 0.6 * rng.uniform();
      for_each_voxel(g, [&](std::size_t l, std::array<double, 3> x) {
        double d2 = 0.0;
        for (int a = off; a < 3; ++a) d2 += (x[a] - c[a]) * (x[a] - c[a]);
        v[l] += amp * std::exp(-0.5 * d2 / (sigma * sigma));
      });
    }
  } else {
    std::array<double, 3> cell{1, 1, 1};
    for (int a = 0; a < r; ++a) cell[off + a] = std::max(2.0, static_cast<double>(g.dim(a)) / 8.0);
    const bool phase = rng.uniform() < 0.5;
    for_each_voxel(g, [&](std::size_t l, std::array<double, 3> x) {
      long parity = phase ? 1 : 0;
      for (int a = off; a < 3; ++a) parity += static_cast<long>(std::floor(x[a] / cell[a]));
      v[l] = parity % 2 == 0 ? 1.0 : 0.0;
    });
    v = gaussian_smooth(v, 1.0);
  }
  to_unit_range(v);
  return v;
}

inline VectorField random_smooth_field(const Grid& g, double amplitude, double smoothness, SplitMix64& rng) {
  VectorField f(g);
  if (amplitude == 0.0) return f;
  for (int c = 0; c < f.components(); ++c) {
    for (double& x : f[c].values()) x = normal(rng);
    f[c] = gaussian_smooth(f[c], smoothness);
  }
  const double m = f.max_norm();
  if (m > 0.0) f *= amplitude / m;
  return f;
}

}  // namespace detail

inline SynthPair synth_pair(const SynthSpec& spec) {
  detail::require(spec.warp_amplitude >= 0.0 && std::isfinite(spec.warp_amplitude),
                  "synth: warp_amplitude must be >= 0");
  detail::require(spec.warp_smoothness > 0.0, "synth: warp_smoothness must be positive");
  const Grid g(spec.dims);
  for (int a = 0; a < g.rank(); ++a) detail::require(g.dim(a) >= 4, "synth: every dim must be >= 4");
  detail::SplitMix64 rng(spec.seed);
  SynthPair out;
  out.fixed = detail::render_pattern(g, spec.pattern, rng);
  for (int attempt = 0; attempt < 10; ++attempt) {
    VectorField truth = detail::random_smooth_field(g, spec.warp_amplitude, spec.warp_smoothness, rng);
    if (min_jacobian_det(truth) > 0.1) {
      out.truth = std::move(truth);
      out.moving = warp(out.fixed, out.truth);
      return out;
    }
  }
  throw InvalidInput("synth: min Jacobian determinant > 0.1 not reached in 10 attempts; reduce warp_amplitude (" +
                     std::to_string(spec.warp_amplitude) + ") or increase warp_smoothness (" +
                     std::to_string(spec.warp_smoothness) + ")");
}

}  // namespace ddr
