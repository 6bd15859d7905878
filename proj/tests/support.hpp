#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "ddr/grid.hpp"

namespace ddr::test {

inline Volume random_volume(const Grid& g, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Volume v(g);
  for (double& x : v.values()) x = u(rng);
  return v;
}

inline Volume smooth_random_volume(const Grid& g, std::uint64_t seed, double sigma) {
  return gaussian_smooth(random_volume(g, seed), sigma);
}

/// Uniform noise in [-amp, amp] per component.
inline VectorField random_field(const Grid& g, std::uint64_t seed, double amp) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amp, amp);
  VectorField f(g);
  for (int c = 0; c < f.components(); ++c)
    for (double& x : f[c].values()) x = u(rng);
  return f;
}

inline VectorField smooth_random_field(const Grid& g, std::uint64_t seed, double sigma, double max_norm) {
  VectorField f = gaussian_smooth(random_field(g, seed, 1.0), sigma);
  const double m = f.max_norm();
  if (m > 0.0) f *= max_norm / m;
  return f;
}

/// Largest vector norm over voxels at least `margin` samples from every edge of a non-singleton axis.
inline double interior_max_norm(const VectorField& f, std::size_t margin) {
  const Grid& g = f.grid();
  const auto e = g.ext3();
  auto inside = [&](std::size_t i, std::size_t n) { return n == 1 || (i >= margin && i + margin < n); };
  double m = 0.0;
  for (std::size_t i = 0; i < e[0]; ++i)
    for (std::size_t j = 0; j < e[1]; ++j)
      for (std::size_t k = 0; k < e[2]; ++k) {
        if (!inside(i, e[0]) || !inside(j, e[1]) || !inside(k, e[2])) continue;
        double n2 = 0.0;
        for (int c = 0; c < f.components(); ++c) n2 += f[c][g.index(i, j, k)] * f[c][g.index(i, j, k)];
        m = std::max(m, n2);
      }
  return std::sqrt(m);
}

/// Fresh empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("ddr_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

inline std::vector<char> file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string file_text(const std::string& path) {
  const auto b = file_bytes(path);
  return std::string(b.begin(), b.end());
}

}  // namespace ddr::test
