#pragma once

// Coordinate descent over the deformation and the heatmap network:
//   (a) with h_m frozen, register the moving image to F + h_m;
//   (b) with the deformation frozen, take SGD steps on the network against
//       the surrogate cost, then refit the soft threshold so that
//       C <= C_U <= C + epsilon / 2.
// With DDR disabled the same loop runs with h_m == 0 and no network.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ddr/bound.hpp"
#include "ddr/cost.hpp"
#include "ddr/fcnn.hpp"
#include "ddr/metrics.hpp"
#include "ddr/registration.hpp"

namespace ddr {

/// Threshold used while backpropagating through sigma during the network steps.
enum class InnerThreshold {
  zero,      // sigma is the identity; the threshold search restarts from 0 afterwards anyway
  previous,  // threshold fitted at the end of the previous cycle
};

struct DdrConfig {
  int outer_iters = 20;
  int n_fcnn_steps = 5;
  RegParams reg;
  NetworkConfig net;
  double epsilon_rel = 1e-3;
  double stepsize_rel = 1e-3;
  double rel_tol = 1e-4;
  bool ddr_enabled = true;
  double lr = 1e-2;
  double momentum = 0.9;
  double clip_norm = 1.0;
  InnerThreshold inner_threshold = InnerThreshold::zero;
  bool trace_metrics = false;
  double dynamic_range = 1.0;  // L in SSIM/PSNR
  double ssim_sigma = 1.5;

  void validate() const {
    detail::require(outer_iters >= 1, "ddr: outer_iters must be >= 1");
    detail::require(n_fcnn_steps >= 0, "ddr: n_fcnn_steps must be >= 0");
    detail::require(epsilon_rel > 0.0 && stepsize_rel > 0.0 && rel_tol > 0.0, "ddr: tolerances must be positive");
    detail::require(lr > 0.0 && clip_norm > 0.0 && momentum >= 0.0 && momentum < 1.0,
                    "ddr: optimizer settings out of range");
    detail::require(dynamic_range > 0.0 && ssim_sigma > 0.0, "ddr: metric settings must be positive");
    reg.validate();
    if (ddr_enabled) net.validate();
  }
};

struct TraceRecord {
  int outer_iter = 0;
  double C = 0.0;
  double C_U = 0.0;
  double t = 0.0;
  double gap = 0.0;
  double epsilon = 0.0;
  std::optional<MetricsReport> metrics;
};

enum class RunStatus { converged, max_iters, solver_flagged, numerical_abort };

inline const char* status_name(RunStatus s) {
  switch (s) {
    case RunStatus::converged: return "converged";
    case RunStatus::max_iters: return "max_iters";
    case RunStatus::solver_flagged: return "solver_flagged";
    case RunStatus::numerical_abort: return "numerical_abort";
  }
  return "?";
}

struct RegistrationResult {
  VectorField disp;
  Volume warped;
  Volume heatmap;  // final h_m (zeros without DDR)
  std::vector<TraceRecord> trace;
  MetricsReport final_metrics;
  RunStatus status = RunStatus::max_iters;
  std::string diagnostic;
  int skipped_fcnn_steps = 0;
};

struct DriverState {
  DeformationState deform;
  std::optional<Network> net;
  Volume heat_mod;
  double t = 0.0;
  std::vector<TraceRecord> trace;
  bool flagged = false;
  int skipped_fcnn_steps = 0;
};

/// True when C dropped by less than rel_tol (relative) over the last cycle.
inline bool convergence_check(const std::vector<TraceRecord>& trace, double rel_tol) {
  detail::require(trace.size() >= 2, "convergence_check: need at least two trace records");
  const double prev = trace[trace.size() - 2].C;
  const double curr = trace.back().C;
  return (prev - curr) / std::max(prev, 1e-30) < rel_tol;
}

namespace detail {

inline double epsilon_for(double C, double epsilon_rel) { return std::max(epsilon_rel * C, 1e-12); }

inline std::vector<Volume> network_input(const Volume& fixed, const Volume& warped, int in_channels) {
  if (in_channels == 1) return {fixed};
  return {fixed, warped};
}

inline TraceRecord make_record(int iter, const Volume& fixed, const Volume& heat_mod, const Volume& warped, double t,
                               const DdrConfig& cfg) {
  TraceRecord r;
  r.outer_iter = iter;
  r.C = ssd(fixed, warped);
  r.C_U = ub_ssd(fixed, heat_mod, warped);
  r.t = t;
  r.gap = r.C_U - r.C;
  r.epsilon = epsilon_for(r.C, cfg.epsilon_rel);
  if (!std::isfinite(r.C) || !std::isfinite(r.C_U))
    throw NumericalError("non-finite cost at outer iteration " + std::to_string(iter));
  if (cfg.trace_metrics) r.metrics = compute_metrics(fixed, warped, cfg.dynamic_range, cfg.ssim_sigma);
  return r;
}

}  // namespace detail

inline DriverState init_state(const Volume& fixed, const Volume& moving, const DdrConfig& cfg) {
  cfg.validate();
  detail::require_same_dims(fixed.grid(), moving.grid(), "register");
  detail::require(fixed.all_finite() && moving.all_finite(), "register: input images contain non-finite values");
  DriverState s;
  s.deform = DeformationState::identity(fixed.grid());
  s.heat_mod = Volume(fixed.grid());
  if (cfg.ddr_enabled) {
    detail::require(fixed.rank() == cfg.net.spatial_rank, "register: image rank does not match network rank");
    for (int a = 0; a < fixed.rank(); ++a)
      detail::require(fixed.grid().dim(a) % cfg.net.divisor() == 0,
                      "register: dims must be divisible by " + std::to_string(cfg.net.divisor()) +
                          " (pad at ingestion)");
    s.net = build_network(cfg.net);
  }
  s.trace.push_back(detail::make_record(0, fixed, s.heat_mod, warp(moving, s.deform.disp), 0.0, cfg));
  return s;
}

/// One (a)+(b) cycle; appends exactly one trace record.
inline DriverState outer_step(DriverState s, const Volume& fixed, const Volume& moving, const DdrConfig& cfg) {
  // (a) deformation with h_m frozen
  if (cfg.reg.iters > 0) {
    const Volume ref_mod = fixed + s.heat_mod;
    if (cfg.reg.solver == Solver::lbfgs) {
      s.deform = lbfgs_register(std::move(s.deform), ref_mod, moving, cfg.reg);
      s.flagged = s.flagged || s.deform.flagged;
    } else {
      s.deform = demons_iterate(std::move(s.deform), ref_mod, moving, cfg.reg);
    }
    if (!s.deform.disp.all_finite()) throw NumericalError("deformation became non-finite");
  }
  const Volume warped = warp(moving, s.deform.disp);

  // (b) heatmap with the deformation frozen
  if (cfg.ddr_enabled && cfg.n_fcnn_steps > 0) {
    Network& net = *s.net;
    const auto input = detail::network_input(fixed, warped, cfg.net.in_channels);
    const double t_inner = cfg.inner_threshold == InnerThreshold::zero ? 0.0 : s.t;
    for (int k = 0; k < cfg.n_fcnn_steps; ++k) {
      const ForwardResult fr = forward(net, input);
      const Volume a1 = alpha1(fixed, soft_threshold(fr.h, t_inner), warped);
      const ParamGradients grads = backward(net, fr.cache, alpha2(fr.h, t_inner, a1));
      if (!grads.all_finite()) {
        ++s.skipped_fcnn_steps;
        continue;
      }
      net = sgd_step(std::move(net), grads, cfg.lr, cfg.momentum, cfg.clip_norm);
    }
    const Volume h = forward(net, input).h;
    if (!h.all_finite()) throw NumericalError("network output became non-finite");
    const double C = ssd(fixed, warped);
    const double max_h = h.max_abs();
    const double step = max_h > 0.0 ? cfg.stepsize_rel * max_h : 1.0;
    const ThresholdFit fit = fit_threshold(h, fixed, warped, detail::epsilon_for(C, cfg.epsilon_rel), step);
    s.t = fit.t;
    s.heat_mod = soft_threshold(h, fit.t);
  }

  s.trace.push_back(detail::make_record(static_cast<int>(s.trace.size()), fixed, s.heat_mod, warped, s.t, cfg));
  return s;
}

/// Full coordinate-descent registration of `moving` onto `fixed`.
inline RegistrationResult register_images(const Volume& fixed, const Volume& moving, const DdrConfig& cfg) {
  DriverState s = init_state(fixed, moving, cfg);
  RegistrationResult res;
  res.status = RunStatus::max_iters;
  for (int k = 0; k < cfg.outer_iters; ++k) {
    try {
      DriverState next = outer_step(s, fixed, moving, cfg);
      s = std::move(next);
    } catch (const NumericalError& e) {
      res.status = RunStatus::numerical_abort;
      res.diagnostic = e.what();
      break;
    }
    if (convergence_check(s.trace, cfg.rel_tol)) {
      res.status = RunStatus::converged;
      break;
    }
  }
  if (s.flagged && res.status != RunStatus::numerical_abort) res.status = RunStatus::solver_flagged;
  res.disp = s.deform.disp;
  res.warped = warp(moving, res.disp);
  res.heatmap = s.heat_mod;
  res.trace = std::move(s.trace);
  res.final_metrics = compute_metrics(fixed, res.warped, cfg.dynamic_range, cfg.ssim_sigma);
  res.skipped_fcnn_steps = s.skipped_fcnn_steps;
  return res;
}

}  // namespace ddr
