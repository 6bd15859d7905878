#pragma once

// Scalar volumes and vector fields on a regular grid, plus the sampling,
// warping, differencing and smoothing primitives the rest of the library
// is built on.
//
// Layout is row-major with the last axis fastest. Internally every grid is
// viewed as three-dimensional with leading axes of extent 1, so one set of
// triple loops serves 1D, 2D and 3D data. Boundary handling is
// clamp-to-edge everywhere.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddr/error.hpp"

namespace ddr {

class Grid {
 public:
  Grid() = default;

  explicit Grid(std::vector<std::size_t> dims, std::vector<double> spacing = {})
      : dims_(std::move(dims)), spacing_(std::move(spacing)) {
    detail::require(!dims_.empty() && dims_.size() <= 3,
                    "grid rank must be 1, 2 or 3, got " + std::to_string(dims_.size()));
    if (spacing_.empty()) spacing_.assign(dims_.size(), 1.0);
    detail::require(spacing_.size() == dims_.size(), "spacing length must equal grid rank");
    const int offset = 3 - rank();
    for (int a = 0; a < rank(); ++a) {
      detail::require(dims_[a] > 0, "grid dimension " + std::to_string(a) + " is zero");
      detail::require(std::isfinite(spacing_[a]) && spacing_[a] > 0.0,
                      "grid spacing " + std::to_string(a) + " must be positive");
      ext_[offset + a] = dims_[a];
      spacing3_[offset + a] = spacing_[a];
    }
  }

  int rank() const noexcept { return static_cast<int>(dims_.size()); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  const std::vector<double>& spacing() const noexcept { return spacing_; }
  std::size_t dim(int axis) const { return dims_.at(axis); }
  double spacing(int axis) const { return spacing_.at(axis); }

  std::size_t size() const noexcept { return ext_[0] * ext_[1] * ext_[2]; }

  double voxel_volume() const noexcept {
    double v = 1.0;
    for (double s : spacing_) v *= s;
    return v;
  }

  // Three-axis view. Axis `a` of the grid is internal axis `axis3(a)`.
  const std::array<std::size_t, 3>& ext3() const noexcept { return ext_; }
  const std::array<double, 3>& spacing3() const noexcept { return spacing3_; }
  int axis3(int axis) const noexcept { return 3 - rank() + axis; }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return (i * ext_[1] + j) * ext_[2] + k;
  }

  bool same_dims(const Grid& other) const noexcept { return dims_ == other.dims_; }

  bool operator==(const Grid& other) const = default;

  std::string describe() const {
    std::string s = "[";
    for (std::size_t a = 0; a < dims_.size(); ++a) {
      if (a) s += "x";
      s += std::to_string(dims_[a]);
    }
    return s + "]";
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> spacing_;
  std::array<std::size_t, 3> ext_{1, 1, 1};
  std::array<double, 3> spacing3_{1.0, 1.0, 1.0};
};

class Volume {
 public:
  Volume() = default;

  explicit Volume(Grid grid, double fill = 0.0) : grid_(std::move(grid)), data_(grid_.size(), fill) {}

  Volume(Grid grid, std::vector<double> data) : grid_(std::move(grid)), data_(std::move(data)) {
    detail::require(data_.size() == grid_.size(),
                    "volume data length " + std::to_string(data_.size()) + " does not match grid " +
                        grid_.describe());
  }

  const Grid& grid() const noexcept { return grid_; }
  int rank() const noexcept { return grid_.rank(); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at3(std::size_t i, std::size_t j, std::size_t k) noexcept { return data_[grid_.index(i, j, k)]; }
  double at3(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[grid_.index(i, j, k)];
  }

  double min() const { return *std::min_element(data_.begin(), data_.end()); }
  double max() const { return *std::max_element(data_.begin(), data_.end()); }

  double max_abs() const noexcept {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Volume& operator+=(const Volume& o) {
    detail::require(grid_.same_dims(o.grid_), "volume dimension mismatch in +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Volume& operator-=(const Volume& o) {
    detail::require(grid_.same_dims(o.grid_), "volume dimension mismatch in -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Volume& operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Volume operator+(Volume a, const Volume& b) { return a += b; }
  friend Volume operator-(Volume a, const Volume& b) { return a -= b; }
  friend Volume operator*(Volume a, double s) { return a *= s; }

  bool operator==(const Volume& o) const = default;

 private:
  Grid grid_;
  std::vector<double> data_;
};

/// One scalar channel per spatial axis; values are in voxel units.
class VectorField {
 public:
  VectorField() = default;

  explicit VectorField(const Grid& grid) : grid_(grid) {
    comps_.assign(static_cast<std::size_t>(grid.rank()), Volume(grid));
  }

  explicit VectorField(std::vector<Volume> comps) : comps_(std::move(comps)) {
    detail::require(!comps_.empty(), "vector field needs at least one component");
    grid_ = comps_.front().grid();
    detail::require(static_cast<int>(comps_.size()) == grid_.rank(),
                    "vector field component count must equal grid rank");
    for (const auto& c : comps_)
      detail::require(c.grid().same_dims(grid_), "vector field components differ in shape");
  }

  const Grid& grid() const noexcept { return grid_; }
  int components() const noexcept { return static_cast<int>(comps_.size()); }
  std::size_t size() const noexcept { return grid_.size(); }

  Volume& operator[](int c) { return comps_[static_cast<std::size_t>(c)]; }
  const Volume& operator[](int c) const { return comps_[static_cast<std::size_t>(c)]; }

  /// Largest per-voxel Euclidean norm.
  double max_norm() const noexcept {
    double m = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
      double s = 0.0;
      for (const auto& c : comps_) s += c[i] * c[i];
      m = std::max(m, s);
    }
    return std::sqrt(m);
  }

  bool all_finite() const noexcept {
    return std::all_of(comps_.begin(), comps_.end(), [](const Volume& v) { return v.all_finite(); });
  }

  /// Component-major flat copy: [c0 voxels..., c1 voxels..., ...].
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(size() * comps_.size());
    for (const auto& c : comps_) out.insert(out.end(), c.values().begin(), c.values().end());
    return out;
  }

  void assign_flat(std::span<const double> flat) {
    detail::require(flat.size() == size() * comps_.size(), "flat vector length does not match field");
    auto it = flat.begin();
    for (auto& c : comps_) {
      std::copy(it, it + static_cast<std::ptrdiff_t>(size()), c.values().begin());
      it += static_cast<std::ptrdiff_t>(size());
    }
  }

  VectorField& operator+=(const VectorField& o) {
    detail::require(grid_.same_dims(o.grid_), "vector field dimension mismatch in +=");
    for (std::size_t c = 0; c < comps_.size(); ++c) comps_[c] += o.comps_[c];
    return *this;
  }
  VectorField& operator*=(double s) noexcept {
    for (auto& c : comps_) c *= s;
    return *this;
  }
  friend VectorField operator+(VectorField a, const VectorField& b) { return a += b; }
  friend VectorField operator*(VectorField a, double s) { return a *= s; }

  bool operator==(const VectorField& o) const = default;

 private:
  Grid grid_;
  std::vector<Volume> comps_;
};

namespace detail {

inline void require_same_dims(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_dims(b))
    throw InvalidInput(std::string(what) + ": dimension mismatch " + a.describe() + " vs " + b.describe());
}

/// Multilinear interpolation weights for one point, computed once and
/// reusable across the components of a field.
struct Stencil {
  std::array<std::size_t, 8> idx{};
  std::array<double, 8> w{};

  double apply(const Volume& v) const noexcept {
    double s = 0.0;
    for (int c = 0; c < 8; ++c) s += w[c] * v[idx[c]];
    return s;
  }
};

struct AxisWeights {
  std::size_t i0 = 0, i1 = 0;
  double f = 0.0;
  bool inside = false;  // point lies within [0, n-1]; derivative is defined
};

inline AxisWeights axis_weights(double p, std::size_t n) noexcept {
  AxisWeights a;
  if (n == 1) return a;
  const double hi = static_cast<double>(n - 1);
  a.inside = p >= 0.0 && p <= hi;
  const double c = std::clamp(p, 0.0, hi);
  a.i0 = std::min(static_cast<std::size_t>(std::floor(c)), n - 2);
  a.i1 = a.i0 + 1;
  a.f = c - static_cast<double>(a.i0);
  return a;
}

inline Stencil make_stencil(const Grid& g, const std::array<double, 3>& p3) noexcept {
  const auto& e = g.ext3();
  const AxisWeights ax[3] = {axis_weights(p3[0], e[0]), axis_weights(p3[1], e[1]), axis_weights(p3[2], e[2])};
  Stencil s;
  for (int c = 0; c < 8; ++c) {
    const int b0 = (c >> 2) & 1, b1 = (c >> 1) & 1, b2 = c & 1;
    const std::size_t i = b0 ? ax[0].i1 : ax[0].i0;
    const std::size_t j = b1 ? ax[1].i1 : ax[1].i0;
    const std::size_t k = b2 ? ax[2].i1 : ax[2].i0;
    s.idx[c] = g.index(i, j, k);
    s.w[c] = (b0 ? ax[0].f : 1.0 - ax[0].f) * (b1 ? ax[1].f : 1.0 - ax[1].f) * (b2 ? ax[2].f : 1.0 - ax[2].f);
  }
  return s;
}

/// Value and exact derivative (per internal axis, voxel units) of the
/// multilinear interpolant. Derivative is zero along clamped axes.
inline double sample_with_derivative(const Volume& v, const std::array<double, 3>& p3,
                                     std::array<double, 3>& d3) noexcept {
  const Grid& g = v.grid();
  const auto& e = g.ext3();
  const AxisWeights ax[3] = {axis_weights(p3[0], e[0]), axis_weights(p3[1], e[1]), axis_weights(p3[2], e[2])};
  double value = 0.0;
  d3 = {0.0, 0.0, 0.0};
  for (int c = 0; c < 8; ++c) {
    const int b[3] = {(c >> 2) & 1, (c >> 1) & 1, c & 1};
    const std::size_t i = b[0] ? ax[0].i1 : ax[0].i0;
    const std::size_t j = b[1] ? ax[1].i1 : ax[1].i0;
    const std::size_t k = b[2] ? ax[2].i1 : ax[2].i0;
    const double x = v[g.index(i, j, k)];
    double wa[3], da[3];
    for (int a = 0; a < 3; ++a) {
      wa[a] = b[a] ? ax[a].f : 1.0 - ax[a].f;
      da[a] = ax[a].inside ? (b[a] ? 1.0 : -1.0) : 0.0;
    }
    value += wa[0] * wa[1] * wa[2] * x;
    d3[0] += da[0] * wa[1] * wa[2] * x;
    d3[1] += wa[0] * da[1] * wa[2] * x;
    d3[2] += wa[0] * wa[1] * da[2] * x;
  }
  return value;
}

/// Calls fn(base, stride, n) for every 1D line of the grid along internal axis a3.
template <class Fn>
void for_each_line(const std::array<std::size_t, 3>& e, int a3, Fn&& fn) {
  const std::array<std::size_t, 3> stride{e[1] * e[2], e[2], 1};
  const int o1 = a3 == 0 ? 1 : 0;
  const int o2 = a3 == 2 ? 1 : 2;
  for (std::size_t p = 0; p < e[o1]; ++p)
    for (std::size_t q = 0; q < e[o2]; ++q) fn(p * stride[o1] + q * stride[o2], stride[a3], e[a3]);
}

/// Central differences inside, one-sided at the ends, divided by h.
inline Volume diff_axis(const Volume& in, int a3, double h) {
  Volume out(in.grid());
  for_each_line(in.grid().ext3(), a3, [&](std::size_t base, std::size_t st, std::size_t n) {
    if (n < 2) return;
    out[base] = (in[base + st] - in[base]) / h;
    for (std::size_t i = 1; i + 1 < n; ++i)
      out[base + i * st] = (in[base + (i + 1) * st] - in[base + (i - 1) * st]) / (2.0 * h);
    out[base + (n - 1) * st] = (in[base + (n - 1) * st] - in[base + (n - 2) * st]) / h;
  });
  return out;
}

/// Exact adjoint of diff_axis.
inline Volume diff_axis_adjoint(const Volume& w, int a3, double h) {
  Volume out(w.grid());
  for_each_line(w.grid().ext3(), a3, [&](std::size_t base, std::size_t st, std::size_t n) {
    if (n < 2) return;
    out[base + st] += w[base] / h;
    out[base] -= w[base] / h;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      out[base + (i + 1) * st] += w[base + i * st] / (2.0 * h);
      out[base + (i - 1) * st] -= w[base + i * st] / (2.0 * h);
    }
    out[base + (n - 1) * st] += w[base + (n - 1) * st] / h;
    out[base + (n - 2) * st] -= w[base + (n - 1) * st] / h;
  });
  return out;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + r)];
  }
  for (double& v : k) v /= sum;
  return k;
}

inline void smooth_axis(Volume& v, int a3, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const long r = static_cast<long>(kernel.size() / 2);
  std::vector<double> line;
  for_each_line(v.grid().ext3(), a3, [&](std::size_t base, std::size_t st, std::size_t n) {
    line.resize(n);
    for (std::size_t i = 0; i < n; ++i) line[i] = v[base + i * st];
    const long last = static_cast<long>(n) - 1;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (long q = -r; q <= r; ++q) {
        const long src = std::clamp(static_cast<long>(i) + q, 0L, last);
        s += kernel[static_cast<std::size_t>(q + r)] * line[static_cast<std::size_t>(src)];
      }
      v[base + i * st] = s;
    }
  });
}

template <class Fn>
void for_each_voxel(const Grid& g, Fn&& fn) {
  const auto& e = g.ext3();
  std::size_t l = 0;
  for (std::size_t i = 0; i < e[0]; ++i)
    for (std::size_t j = 0; j < e[1]; ++j)
      for (std::size_t k = 0; k < e[2]; ++k, ++l) fn(l, std::array<double, 3>{double(i), double(j), double(k)});
}

inline std::array<double, 3> displaced(const VectorField& u, std::size_t l, std::array<double, 3> p3) {
  const int off = 3 - u.components();
  for (int c = 0; c < u.components(); ++c) p3[off + c] += u[c][l];
  return p3;
}

}  // namespace detail

/// Multilinear interpolation at a point in voxel coordinates, clamped to the grid.
inline double sample_linear(const Volume& vol, std::span<const double> point) {
  detail::require(static_cast<int>(point.size()) == vol.rank(), "sample_linear: point rank mismatch");
  std::array<double, 3> p3{0.0, 0.0, 0.0};
  for (int a = 0; a < vol.rank(); ++a) p3[vol.grid().axis3(a)] = point[a];
  return detail::make_stencil(vol.grid(), p3).apply(vol);
}

/// output[x] = vol(x + disp[x]).
inline Volume warp(const Volume& vol, const VectorField& disp) {
  detail::require_same_dims(vol.grid(), disp.grid(), "warp");
  Volume out(vol.grid());
  detail::for_each_voxel(vol.grid(), [&](std::size_t l, std::array<double, 3> p) {
    out[l] = detail::make_stencil(vol.grid(), detail::displaced(disp, l, p)).apply(vol);
  });
  return out;
}

/// Spatial gradient in physical units (divided by spacing).
inline VectorField gradient(const Volume& vol) {
  const Grid& g = vol.grid();
  for (int a = 0; a < g.rank(); ++a)
    detail::require(g.dim(a) >= 2, "gradient: axis " + std::to_string(a) + " has fewer than 2 samples");
  std::vector<Volume> comps;
  comps.reserve(static_cast<std::size_t>(g.rank()));
  for (int a = 0; a < g.rank(); ++a) comps.push_back(detail::diff_axis(vol, g.axis3(a), g.spacing(a)));
  return VectorField(std::move(comps));
}

/// Separable Gaussian smoothing, one sigma (in voxels) per axis. Sigma 0 leaves an axis untouched.
inline Volume gaussian_smooth(const Volume& vol, std::span<const double> sigma) {
  detail::require(static_cast<int>(sigma.size()) == vol.rank(), "gaussian_smooth: one sigma per axis required");
  for (double s : sigma) detail::require(s >= 0.0 && std::isfinite(s), "gaussian_smooth: sigma must be >= 0");
  Volume out = vol;
  for (int a = 0; a < vol.rank(); ++a)
    if (sigma[a] > 0.0) detail::smooth_axis(out, vol.grid().axis3(a), sigma[a]);
  return out;
}

inline Volume gaussian_smooth(const Volume& vol, double sigma) {
  const std::vector<double> s(static_cast<std::size_t>(vol.rank()), sigma);
  return gaussian_smooth(vol, s);
}

inline VectorField gaussian_smooth(const VectorField& f, double sigma) {
  detail::require(sigma >= 0.0, "gaussian_smooth: sigma must be >= 0");
  if (sigma == 0.0) return f;
  VectorField out = f;
  for (int c = 0; c < f.components(); ++c) out[c] = gaussian_smooth(f[c], sigma);
  return out;
}

/// Displacement of (id + outer) o (id + inner).
inline VectorField compose(const VectorField& outer, const VectorField& inner) {
  detail::require_same_dims(outer.grid(), inner.grid(), "compose");
  VectorField out = inner;
  const Grid& g = inner.grid();
  detail::for_each_voxel(g, [&](std::size_t l, std::array<double, 3> p) {
    const auto st = detail::make_stencil(g, detail::displaced(inner, l, p));
    for (int c = 0; c < out.components(); ++c) out[c][l] += st.apply(outer[c]);
  });
  return out;
}

/// min over voxels of det(I + du/dx), derivatives in voxel units.
inline double min_jacobian_det(const VectorField& disp) {
  const Grid& g = disp.grid();
  const int r = g.rank();
  for (int a = 0; a < r; ++a)
    detail::require(g.dim(a) >= 2, "min_jacobian_det: axis " + std::to_string(a) + " has fewer than 2 samples");
  // d[c][a] = d u_c / d x_a
  std::vector<std::vector<Volume>> d(static_cast<std::size_t>(r));
  for (int c = 0; c < r; ++c)
    for (int a = 0; a < r; ++a) d[c].push_back(detail::diff_axis(disp[c], g.axis3(a), 1.0));
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < g.size(); ++l) {
    auto J = [&](int c, int a) { return (c == a ? 1.0 : 0.0) + d[c][a][l]; };
    double det = 0.0;
    if (r == 1) {
      det = J(0, 0);
    } else if (r == 2) {
      det = J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
    } else {
      det = J(0, 0) * (J(1, 1) * J(2, 2) - J(1, 2) * J(2, 1)) - J(0, 1) * (J(1, 0) * J(2, 2) - J(1, 2) * J(2, 0)) +
            J(0, 2) * (J(1, 0) * J(2, 1) - J(1, 1) * J(2, 0));
    }
    m = std::min(m, det);
  }
  return m;
}

}  // namespace ddr
