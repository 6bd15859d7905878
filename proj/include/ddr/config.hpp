#pragma once

// Run configuration as a flat text file of `dotted.key=value` lines with `#`
// comments. Every key has a default; unknown or repeated keys are errors.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ddr/driver.hpp"
#include "ddr/error.hpp"
#include "ddr/synth.hpp"

namespace ddr {

struct RunConfig {
  DdrConfig ddr;
  SynthSpec synth;
  int bench_pairs = 10;
  std::uint64_t bench_first_seed = 1;
  int bench_workers = 1;
  std::string fixed;
  std::string moving;
  std::string out;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw InvalidInput("config key " + key + ": expected a number, got '" + v + "'");
  return out;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw InvalidInput("config key " + key + ": expected an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw InvalidInput("config key " + key + ": expected on/off, got '" + v + "'");
}

template <class Int>
std::vector<Int> parse_list(const std::string& key, const std::string& v) {
  std::vector<Int> out;
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int<Int>(key, trim(item)));
  return out;
}

template <class T>
std::string fmt_list(const std::vector<T>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto num = [&k](std::string name, std::string doc, auto member) {
      k.push_back({name, std::move(doc),
                   [member, name](RunConfig& c, const std::string& v) { member(c) = parse_double(name, v); },
                   [member](const RunConfig& c) { return fmt_double(member(c)); }});
    };
    auto integer = [&k](std::string name, std::string doc, auto member) {
      k.push_back({name, std::move(doc),
                   [member, name](RunConfig& c, const std::string& v) {
                     using T = std::remove_reference_t<decltype(member(c))>;
                     member(c) = parse_int<T>(name, v);
                   },
                   [member](const RunConfig& c) { return std::to_string(member(c)); }});
    };
    auto flag = [&k](std::string name, std::string doc, auto member) {
      k.push_back({name, std::move(doc),
                   [member, name](RunConfig& c, const std::string& v) { member(c) = parse_bool(name, v); },
                   [member](const RunConfig& c) {
                     return std::string(member(c) ? "on" : "off");
                   }});
    };
    auto text = [&k](std::string name, std::string doc, auto member) {
      k.push_back({name, std::move(doc), [member](RunConfig& c, const std::string& v) { member(c) = v; },
                   [member](const RunConfig& c) { return member(c); }});
    };

    flag("ddr.enabled", "learn and apply the heatmap", [](auto& c) -> auto& { return c.ddr.ddr_enabled; });
    integer("ddr.outer_iters", "maximum coordinate-descent cycles",
            [](auto& c) -> auto& { return c.ddr.outer_iters; });
    integer("ddr.n_fcnn_steps", "network SGD steps per cycle", [](auto& c) -> auto& { return c.ddr.n_fcnn_steps; });
    num("ddr.epsilon_rel", "allowed bound gap as a fraction of C", [](auto& c) -> auto& {
      return c.ddr.epsilon_rel;
    });
    num("ddr.stepsize_rel", "threshold scan step as a fraction of max|h|",
        [](auto& c) -> auto& { return c.ddr.stepsize_rel; });
    num("ddr.rel_tol", "stop when C drops by less than this fraction per cycle",
        [](auto& c) -> auto& { return c.ddr.rel_tol; });
    k.push_back({"ddr.inner_threshold", "threshold used during network steps: zero or previous",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "zero") c.ddr.inner_threshold = InnerThreshold::zero;
                   else if (v == "previous") c.ddr.inner_threshold = InnerThreshold::previous;
                   else throw InvalidInput("config key ddr.inner_threshold: expected zero or previous, got '" + v + "'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.ddr.inner_threshold == InnerThreshold::zero ? "zero" : "previous");
                 }});

    k.push_back({"reg.solver", "diffeo, log or lbfgs",
                 [](RunConfig& c, const std::string& v) { c.ddr.reg.solver = parse_solver(v); },
                 [](const RunConfig& c) { return std::string(solver_name(c.ddr.reg.solver)); }});
    integer("reg.iters", "solver iterations per cycle", [](auto& c) -> auto& { return c.ddr.reg.iters; });
    num("reg.sigma_fluid", "demons update smoothing (voxels)",
        [](auto& c) -> auto& { return c.ddr.reg.sigma_fluid; });
    num("reg.sigma_diffusion", "demons field smoothing (voxels)",
        [](auto& c) -> auto& { return c.ddr.reg.sigma_diffusion; });
    num("reg.lambda", "gradient regularizer weight", [](auto& c) -> auto& { return c.ddr.reg.lambda; });
    k.push_back({"reg.kappa", "demons step control; auto = 1/mean(spacing)^2",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "auto") c.ddr.reg.kappa.reset();
                   else c.ddr.reg.kappa = parse_double("reg.kappa", v);
                 },
                 [](const RunConfig& c) {
                   return c.ddr.reg.kappa ? fmt_double(*c.ddr.reg.kappa) : std::string("auto");
                 }});
    num("reg.max_step", "largest demons update per voxel", [](auto& c) -> auto& {
      return c.ddr.reg.max_step;
    });
    integer("reg.lbfgs_memory", "stored curvature pairs", [](auto& c) -> auto& { return c.ddr.reg.lbfgs_memory; });
    num("reg.wolfe_c1", "sufficient decrease constant", [](auto& c) -> auto& { return c.ddr.reg.wolfe_c1; });
    num("reg.wolfe_c2", "curvature constant", [](auto& c) -> auto& { return c.ddr.reg.wolfe_c2; });

    integer("net.in_channels", "1 = fixed image only, 2 = fixed and warped",
            [](auto& c) -> auto& { return c.ddr.net.in_channels; });
    k.push_back({"net.channels", "encoder widths, one per stage",
                 [](RunConfig& c, const std::string& v) {
                   c.ddr.net.channels_per_stage = parse_list<int>("net.channels", v);
                   c.ddr.net.stages = static_cast<int>(c.ddr.net.channels_per_stage.size());
                 },
                 [](const RunConfig& c) { return fmt_list(c.ddr.net.channels_per_stage); }});
    k.push_back({"net.skip_links", "encoder levels fused into the decoder (may be empty)",
                 [](RunConfig& c, const std::string& v) { c.ddr.net.skip_links = parse_list<int>("net.skip_links", v); },
                 [](const RunConfig& c) { return fmt_list(c.ddr.net.skip_links); }});
    integer("net.kernel_size", "odd convolution size", [](auto& c) -> auto& { return c.ddr.net.kernel_size; });
    integer("net.seed", "weight initialization seed", [](auto& c) -> auto& { return c.ddr.net.seed; });

    num("opt.lr", "network learning rate", [](auto& c) -> auto& { return c.ddr.lr; });
    num("opt.momentum", "SGD momentum", [](auto& c) -> auto& { return c.ddr.momentum; });
    num("opt.clip_norm", "global gradient-norm clip", [](auto& c) -> auto& { return c.ddr.clip_norm; });

    num("metrics.dynamic_range", "L used by SSIM and PSNR", [](auto& c) -> auto& {
      return c.ddr.dynamic_range;
    });
    num("metrics.ssim_sigma", "SSIM Gaussian window (voxels)", [](auto& c) -> auto& { return c.ddr.ssim_sigma; });
    flag("metrics.per_iteration", "add metrics to every trace record in the report",
         [](auto& c) -> auto& { return c.ddr.trace_metrics; });

    k.push_back({"synth.pattern", "blobs or checker",
                 [](RunConfig& c, const std::string& v) { c.synth.pattern = parse_pattern(v); },
                 [](const RunConfig& c) { return std::string(pattern_name(c.synth.pattern)); }});
    k.push_back({"synth.dims", "image size, comma separated",
                 [](RunConfig& c, const std::string& v) { c.synth.dims = parse_list<std::size_t>("synth.dims", v); },
                 [](const RunConfig& c) { return fmt_list(c.synth.dims); }});
    num("synth.amplitude", "largest true displacement (voxels)",
        [](auto& c) -> auto& { return c.synth.warp_amplitude; });
    num("synth.smoothness", "smoothing of the true displacement (voxels)",
        [](auto& c) -> auto& { return c.synth.warp_smoothness; });
    integer("synth.seed", "pattern and displacement seed", [](auto& c) -> auto& { return c.synth.seed; });

    integer("bench.pairs", "number of synthetic pairs", [](auto& c) -> auto& { return c.bench_pairs; });
    integer("bench.first_seed", "seed of pair 0; pair i uses first_seed + i",
            [](auto& c) -> auto& { return c.bench_first_seed; });
    integer("bench.workers", "pairs processed in parallel", [](auto& c) -> auto& { return c.bench_workers; });

    text("io.fixed", "fixed image path", [](auto& c) -> auto& { return c.fixed; });
    text("io.moving", "moving image path", [](auto& c) -> auto& { return c.moving; });
    text("io.out", "output directory", [](auto& c) -> auto& { return c.out; });
    return k;
  }();
  return keys;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys())
    if (k.name == key) return k.set(cfg, value);
  throw InvalidInput("unknown config key '" + key + "'");
}

inline RunConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  RunConfig cfg;
  std::vector<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidInput(where + ": expected key=value, got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (std::find(seen.begin(), seen.end(), key) != seen.end())
      throw InvalidInput(where + ": key '" + key + "' given twice");
    seen.push_back(key);
    try {
      set_config_value(cfg, key, value);
    } catch (const InvalidInput& e) {
      throw InvalidInput(where + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config file " + path);
  return parse_config(in, path);
}

/// Every key with its current value, in registry order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_keys()) out.emplace_back(k.name, k.get(cfg));
  return out;
}

inline std::string format_config(const RunConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : config_entries(cfg)) s += k + "=" + v + "\n";
  return s;
}

}  // namespace ddr
