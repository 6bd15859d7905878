#pragma once

// Limited-memory BFGS with a strong-Wolfe line search.
//
// The objective is any callable `double(std::span<const double> x, std::span<double> grad)`
// returning f(x) and writing its gradient.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <span>
#include <vector>

#include "ddr/error.hpp"

namespace ddr {

struct LbfgsOptions {
  int memory = 10;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  int max_iters = 100;
  double grad_tol = 1e-8;  // on the infinity norm
  int max_line_search_evals = 40;
};

enum class LbfgsStatus { converged, max_iters, line_search_failed };

struct LbfgsResult {
  std::vector<double> x;  // best iterate seen
  double f = 0.0;
  int iterations = 0;
  LbfgsStatus status = LbfgsStatus::max_iters;
  std::vector<double> f_history;  // f at x0 and after every accepted step
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double inf_norm(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

/// Minimizer of the cubic through (a, fa, da) and (b, fb, db), safeguarded into
/// the middle 80% of [a, b]; bisection when the cubic is degenerate.
inline double cubic_step(double a, double fa, double da, double b, double fb, double db) {
  const double lo = std::min(a, b), hi = std::max(a, b);
  const double margin = 0.1 * (hi - lo);
  const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - da * db;
  double t = 0.5 * (a + b);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = db - da + 2.0 * d2;
    if (denom != 0.0) {
      const double c = b - (b - a) * (db + d2 - d1) / denom;
      if (std::isfinite(c)) t = c;
    }
  }
  return std::clamp(t, lo + margin, hi - margin);
}

}  // namespace detail

template <class Objective>
LbfgsResult lbfgs_minimize(Objective&& objective, std::vector<double> x0, const LbfgsOptions& opt = {}) {
  detail::require(opt.memory >= 1, "lbfgs: memory must be >= 1");
  detail::require(opt.wolfe_c1 > 0.0 && opt.wolfe_c1 < opt.wolfe_c2 && opt.wolfe_c2 < 1.0,
                  "lbfgs: need 0 < c1 < c2 < 1");
  for (double v : x0) detail::require(std::isfinite(v), "lbfgs: x0 is not finite");

  const std::size_t n = x0.size();
  std::vector<double> x = std::move(x0), g(n), d(n), xt(n), gt(n);
  double f = objective(std::span<const double>(x), std::span<double>(g));
  if (!std::isfinite(f)) throw InvalidInput("lbfgs: objective is not finite at x0");

  LbfgsResult res;
  res.x = x;
  res.f = f;
  res.f_history.push_back(f);

  std::deque<std::vector<double>> S, Y;
  std::deque<double> rho;
  std::vector<double> alpha(static_cast<std::size_t>(opt.memory));

  for (int iter = 0;; ++iter) {
    if (detail::inf_norm(g) < opt.grad_tol) {
      res.status = LbfgsStatus::converged;
      break;
    }
    if (iter >= opt.max_iters) {
      res.status = LbfgsStatus::max_iters;
      break;
    }

    // Two-loop recursion: d = -H g.
    for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
    for (std::size_t j = S.size(); j-- > 0;) {
      alpha[j] = rho[j] * detail::dot(S[j], d);
      for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[j] * Y[j][i];
    }
    if (!S.empty()) {
      const double gamma = detail::dot(S.back(), Y.back()) / detail::dot(Y.back(), Y.back());
      for (double& v : d) v *= gamma;
    }
    for (std::size_t j = 0; j < S.size(); ++j) {
      const double beta = rho[j] * detail::dot(Y[j], d);
      for (std::size_t i = 0; i < n; ++i) d[i] += (alpha[j] - beta) * S[j][i];
    }
    double dphi0 = detail::dot(g, d);
    if (!(dphi0 < 0.0)) {
      S.clear();
      Y.clear();
      rho.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      dphi0 = detail::dot(g, d);
    }

    // Strong-Wolfe line search on phi(a) = f(x + a d).
    const double phi0 = f;
    int evals = 0;
    double a_acc = 0.0, f_acc = phi0;
    bool ok = false;
    auto eval = [&](double a, double& dphi) {
      for (std::size_t i = 0; i < n; ++i) xt[i] = x[i] + a * d[i];
      const double ft = objective(std::span<const double>(xt), std::span<double>(gt));
      ++evals;
      dphi = detail::dot(gt, d);
      if (std::isfinite(ft) && ft < res.f) {
        res.f = ft;
        res.x = xt;
      }
      return std::isfinite(ft) ? ft : std::numeric_limits<double>::infinity();
    };
    std::vector<double> g_acc;
    auto accept = [&](double a, double fa) {
      a_acc = a;
      f_acc = fa;
      g_acc = gt;
      ok = true;
    };
    auto zoom = [&](double lo, double flo, double dlo, double hi, double fhi, double dhi) {
      while (evals < opt.max_line_search_evals) {
        const double a = detail::cubic_step(lo, flo, dlo, hi, fhi, dhi);
        double da;
        const double fa = eval(a, da);
        if (fa > phi0 + opt.wolfe_c1 * a * dphi0 || fa >= flo) {
          hi = a, fhi = fa, dhi = da;
        } else {
          if (std::abs(da) <= -opt.wolfe_c2 * dphi0) {
            accept(a, fa);
            return;
          }
          if (da * (hi - lo) >= 0.0) hi = lo, fhi = flo, dhi = dlo;
          lo = a, flo = fa, dlo = da;
        }
        if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
      }
    };

    double a_prev = 0.0, f_prev = phi0, d_prev = dphi0;
    double a = S.empty() ? std::min(1.0, 1.0 / std::sqrt(detail::dot(g, g))) : 1.0;
    while (evals < opt.max_line_search_evals) {
      double da;
      const double fa = eval(a, da);
      if (fa > phi0 + opt.wolfe_c1 * a * dphi0 || (evals > 1 && fa >= f_prev)) {
        zoom(a_prev, f_prev, d_prev, a, fa, da);
        break;
      }
      if (std::abs(da) <= -opt.wolfe_c2 * dphi0) {
        accept(a, fa);
        break;
      }
      if (da >= 0.0) {
        zoom(a, fa, da, a_prev, f_prev, d_prev);
        break;
      }
      a_prev = a, f_prev = fa, d_prev = da;
      a *= 2.0;
    }

    if (!ok) {
      res.status = LbfgsStatus::line_search_failed;
      res.iterations = iter;
      return res;
    }

    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = a_acc * d[i];
      y[i] = g_acc[i] - g[i];
      x[i] += s[i];
    }
    f = f_acc;
    g = g_acc;
    res.f_history.push_back(f);
    res.iterations = iter + 1;
    if (f <= res.f) {
      res.f = f;
      res.x = x;
    }

    const double sy = detail::dot(s, y);
    if (sy > 1e-12 * std::sqrt(detail::dot(s, s) * detail::dot(y, y))) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opt.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
  }
  return res;
}

}  // namespace ddr
