#pragma once

// Deformation solvers for the regularized SSD energy against a (possibly
// heatmap-modified) reference: diffeomorphic demons, log-domain demons on a
// stationary velocity field, and LBFGS directly on the displacement field.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ddr/cost.hpp"
#include "ddr/grid.hpp"
#include "ddr/lbfgs.hpp"

namespace ddr {

enum class Solver { diffeo_demons, log_demons, lbfgs };

inline const char* solver_name(Solver s) {
  switch (s) {
    case Solver::diffeo_demons: return "diffeo";
    case Solver::log_demons: return "log";
    case Solver::lbfgs: return "lbfgs";
  }
  return "?";
}

inline Solver parse_solver(const std::string& s) {
  if (s == "diffeo" || s == "diffeo_demons") return Solver::diffeo_demons;
  if (s == "log" || s == "log_demons") return Solver::log_demons;
  if (s == "lbfgs") return Solver::lbfgs;
  throw InvalidInput("unknown solver '" + s + "' (expected diffeo, log or lbfgs)");
}

struct RegParams {
  Solver solver = Solver::diffeo_demons;
  int iters = 10;
  double sigma_fluid = 1.0;
  double sigma_diffusion = 1.0;
  double lambda = 1.0;
  std::optional<double> kappa;  // unset: 1 / mean(spacing)^2
  double max_step = 0.5;
  int lbfgs_memory = 10;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;

  void validate() const {
    detail::require(iters >= 0, "reg: iters must be >= 0");
    detail::require(sigma_fluid >= 0.0 && sigma_diffusion >= 0.0, "reg: smoothing sigmas must be >= 0");
    detail::require(lambda >= 0.0, "reg: lambda must be >= 0");
    detail::require(!kappa || *kappa > 0.0, "reg: kappa must be positive");
    detail::require(max_step > 0.0, "reg: max_step must be positive");
    detail::require(lbfgs_memory >= 1, "reg: lbfgs_memory must be >= 1");
    detail::require(wolfe_c1 > 0.0 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1.0, "reg: need 0 < wolfe_c1 < wolfe_c2 < 1");
  }

  double kappa_for(const Grid& g) const {
    if (kappa) return *kappa;
    double m = 0.0;
    for (double s : g.spacing()) m += s;
    m /= g.rank();
    return 1.0 / (m * m);
  }
};

struct DeformationState {
  VectorField disp;
  VectorField velocity;  // authoritative for log_demons; disp = exp_field(velocity)
  std::vector<double> energy_history;
  bool flagged = false;  // a line search failed during the last lbfgs_register

  static DeformationState identity(const Grid& g) { return {VectorField(g), VectorField(g), {}, false}; }
};

/// r J / (|J|^2 + kappa r^2) with r = ref - M(x+u) and J the gradient of the
/// warped moving image; result in voxel units, magnitude clamped to max_step.
inline VectorField demons_force(const Volume& ref_mod, const Volume& moving, const VectorField& disp, double kappa,
                                double max_step = 0.5) {
  detail::require_same_dims(ref_mod.grid(), moving.grid(), "demons_force");
  detail::require_same_dims(ref_mod.grid(), disp.grid(), "demons_force");
  detail::require(kappa > 0.0, "demons_force: kappa must be positive");
  detail::require(max_step > 0.0, "demons_force: max_step must be positive");
  const Volume warped = warp(moving, disp);
  const VectorField J = gradient(warped);
  const Grid& g = ref_mod.grid();
  VectorField force(g);
  for (std::size_t l = 0; l < g.size(); ++l) {
    const double r = ref_mod[l] - warped[l];
    double jj = 0.0;
    for (int c = 0; c < g.rank(); ++c) jj += J[c][l] * J[c][l];
    const double denom = jj + kappa * r * r;
    if (denom < 1e-12) continue;
    double mag2 = 0.0;
    for (int c = 0; c < g.rank(); ++c) {
      force[c][l] = r * J[c][l] / denom / g.spacing(c);
      mag2 += force[c][l] * force[c][l];
    }
    if (mag2 > max_step * max_step) {
      const double s = max_step / std::sqrt(mag2);
      for (int c = 0; c < g.rank(); ++c) force[c][l] *= s;
    }
  }
  return force;
}

/// Scaling and squaring: halve until every vector is at most 0.5 voxel, then self-compose.
inline VectorField exp_field(const VectorField& velocity) {
  const double m = velocity.max_norm();
  const int n = m > 0.0 ? std::max(0, static_cast<int>(std::ceil(std::log2(m / 0.5)))) : 0;
  VectorField phi = velocity * std::ldexp(1.0, -n);
  for (int i = 0; i < n; ++i) phi = compose(phi, phi);
  return phi;
}

inline DeformationState demons_iterate(DeformationState state, const Volume& ref_mod, const Volume& moving,
                                       const RegParams& params) {
  params.validate();
  detail::require(params.solver != Solver::lbfgs, "demons_iterate: solver must be diffeo or log demons");
  const Volume zero(ref_mod.grid());
  const double kappa = params.kappa_for(ref_mod.grid());
  for (int it = 0; it < params.iters; ++it) {
    VectorField force = demons_force(ref_mod, moving, state.disp, kappa, params.max_step);
    force = gaussian_smooth(force, params.sigma_fluid);
    if (params.solver == Solver::diffeo_demons) {
      state.disp = gaussian_smooth(compose(state.disp, exp_field(force)), params.sigma_diffusion);
    } else {
      state.velocity = gaussian_smooth(state.velocity + force, params.sigma_diffusion);
      state.disp = exp_field(state.velocity);
    }
    state.energy_history.push_back(energy(ref_mod, zero, moving, state.disp, params.lambda));
  }
  return state;
}

/// Runs LBFGS on the energy over the flattened displacement, params.iters iterations.
inline DeformationState lbfgs_register(DeformationState state, const Volume& ref_mod, const Volume& moving,
                                       const RegParams& params) {
  params.validate();
  detail::require(params.solver == Solver::lbfgs, "lbfgs_register: solver must be lbfgs");
  detail::require_same_dims(ref_mod.grid(), state.disp.grid(), "lbfgs_register");
  const Volume zero(ref_mod.grid());
  VectorField work = state.disp;
  auto objective = [&](std::span<const double> x, std::span<double> g) {
    work.assign_flat(x);
    const auto grad = energy_gradient(ref_mod, zero, moving, work, params.lambda).flatten();
    std::copy(grad.begin(), grad.end(), g.begin());
    return energy(ref_mod, zero, moving, work, params.lambda);
  };
  LbfgsOptions opt;
  opt.memory = params.lbfgs_memory;
  opt.wolfe_c1 = params.wolfe_c1;
  opt.wolfe_c2 = params.wolfe_c2;
  opt.max_iters = params.iters;
  opt.grad_tol = 1e-10;
  const LbfgsResult r = lbfgs_minimize(objective, state.disp.flatten(), opt);
  state.disp.assign_flat(r.x);
  state.flagged = r.status == LbfgsStatus::line_search_failed;
  state.energy_history.insert(state.energy_history.end(), r.f_history.begin() + 1, r.f_history.end());
  return state;
}

}  // namespace ddr
