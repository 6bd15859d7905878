#pragma once

// Command-line front end: register, metrics, synth and bench subcommands.
// Exit codes: 0 success, 1 usage or input error, 2 numerical abort.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <atomic>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ddr/config.hpp"
#include "ddr/driver.hpp"
#include "ddr/io.hpp"
#include "ddr/metrics.hpp"
#include "ddr/report.hpp"
#include "ddr/synth.hpp"

namespace ddr {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 1;
inline constexpr int kExitNumerical = 2;

/// Registration on user-sized images: pads to the network divisor, runs the
/// driver, then crops. The returned displacement is rounded through float32
/// and `warped` is recomputed from it, so both match their files exactly.
inline RegistrationResult run_pipeline(const Volume& fixed, const Volume& moving, DdrConfig cfg,
                                       std::vector<std::size_t>* padded_dims = nullptr) {
  detail::require_same_dims(fixed.grid(), moving.grid(), "register: fixed/moving");
  std::size_t m = 1;
  if (cfg.ddr_enabled) {
    detail::require(fixed.rank() >= 2, "register: DDR needs 2D or 3D images (use ddr.enabled=off for 1D)");
    cfg.net.spatial_rank = fixed.rank();
    m = cfg.net.divisor();
  }
  const Volume pf = pad_to_multiple(fixed, m);
  const Volume pm = pad_to_multiple(moving, m);
  if (padded_dims) *padded_dims = pf.grid().dims();
  RegistrationResult res = register_images(pf, pm, cfg);
  const Grid& g = fixed.grid();
  res.disp = quantize_float32(crop_to(res.disp, g));
  res.warped = warp(moving, res.disp);
  res.heatmap = crop_to(res.heatmap, g);
  res.final_metrics = compute_metrics(fixed, res.warped, cfg.dynamic_range, cfg.ssim_sigma);
  return res;
}

namespace detail {

/// Reads an image and maps it to [0,1]; integer files are already normalized by the reader.
inline LoadedVolume ingest(const std::string& path) {
  LoadedVolume lv = load_volume(path);
  if (!lv.norm.applied) lv.norm = normalize_unit(lv.volume);
  if (lv.norm.constant) std::cerr << "warning: " << path << " is constant; normalized to zeros\n";
  return lv;
}

inline std::string path_in(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline void make_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline int cmd_register(RunConfig cfg) {
  if (cfg.fixed.empty() || cfg.moving.empty() || cfg.out.empty())
    throw InvalidInput("register: --fixed, --moving and --out are required (or io.* config keys)");
  cfg.ddr.validate();
  LoadedVolume f = ingest(cfg.fixed);
  LoadedVolume m = ingest(cfg.moving);
  if (!f.volume.grid().same_dims(m.volume.grid()))
    throw InvalidInput("register: dim mismatch between " + cfg.fixed + " (" + f.volume.grid().describe() + ") and " +
                       cfg.moving + " (" + m.volume.grid().describe() + ")");
  make_dir(cfg.out);

  std::vector<std::size_t> padded;
  const RegistrationResult res = run_pipeline(f.volume, m.volume, cfg.ddr, &padded);

  ReportContext ctx;
  ctx.config = cfg;
  ctx.fixed_norm = f.norm;
  ctx.moving_norm = m.norm;
  ctx.dims = f.volume.grid().dims();
  ctx.padded_dims = padded;
  ctx.spacing = f.volume.grid().spacing();
  ctx.files = {{"warped", "warped.nii"}, {"displacement", "disp.nii"}, {"residual", "residual.nii"},
               {"trace", "trace.csv"}};
  write_volume(res.warped, path_in(cfg.out, "warped.nii"));
  write_field(res.disp, path_in(cfg.out, "disp.nii"));
  if (cfg.ddr.ddr_enabled) {
    write_volume(res.heatmap, path_in(cfg.out, "heatmap.nii"));
    ctx.files.emplace_back("heatmap", "heatmap.nii");
  }
  write_volume(f.volume - res.warped, path_in(cfg.out, "residual.nii"));
  write_trace_csv(res.trace, path_in(cfg.out, "trace.csv"));
  write_report(res, ctx, path_in(cfg.out, "report.json"));

  if (res.status == RunStatus::numerical_abort) {
    std::cerr << "numerical abort: " << res.diagnostic << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

inline int cmd_metrics(const std::string& a, const std::string& b, double L) {
  const Volume va = read_volume(a);
  const Volume vb = read_volume(b);
  if (!va.grid().same_dims(vb.grid()))
    throw InvalidInput("metrics: dim mismatch between " + a + " (" + va.grid().describe() + ") and " + b + " (" +
                       vb.grid().describe() + ")");
  std::cout << metrics_json(compute_metrics(va, vb, L)).dump(2) << "\n";
  return kExitOk;
}

inline int cmd_synth(const RunConfig& cfg, const std::string& out) {
  const SynthPair p = synth_pair(cfg.synth);
  make_dir(out);
  write_volume(p.fixed, path_in(out, "fixed.nii"));
  write_volume(p.moving, path_in(out, "moving.nii"));
  write_field(p.truth, path_in(out, "truth.nii"));
  return kExitOk;
}

struct BenchRow {
  std::uint64_t seed = 0;
  MetricsReport base, ddr;
  RunStatus base_status = RunStatus::max_iters, ddr_status = RunStatus::max_iters;
};

inline std::string fmt_metric(double v) { return std::isinf(v) ? std::string("inf") : format_sig12(v); }

inline std::string bench_summary(const std::vector<BenchRow>& rows) {
  std::string s =
      "pair,seed,ssd_base,ssd_ddr,ssd_improvement_pct,ssim_base,ssim_ddr,ssim_improvement_pct,psnr_base,psnr_ddr,"
      "psnr_improvement_pct,status_base,status_ddr\n";
  auto line = [](const std::string& pair, const std::string& seed, const MetricsReport& b, const MetricsReport& d,
                 const std::string& sb, const std::string& sd) {
    const bool finite_psnr = std::isfinite(b.psnr) && std::isfinite(d.psnr) && b.psnr != 0.0;
    return pair + "," + seed + "," + format_sig12(b.mean_ssd) + "," + format_sig12(d.mean_ssd) + "," +
           (b.mean_ssd > 0.0 ? format_sig12(improvement_percent(b.mean_ssd, d.mean_ssd, false)) : "nan") + "," +
           format_sig12(b.ssim) + "," + format_sig12(d.ssim) + "," +
           format_sig12(improvement_percent(b.ssim, d.ssim, true)) + "," + fmt_metric(b.psnr) + "," +
           fmt_metric(d.psnr) + "," + (finite_psnr ? format_sig12(improvement_percent(b.psnr, d.psnr, true)) : "nan") +
           "," + sb + "," + sd + "\n";
  };
  MetricsReport mb{0, 0, 0, 1}, md{0, 0, 0, 1};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    s += line(std::to_string(i), std::to_string(r.seed), r.base, r.ddr, status_name(r.base_status),
              status_name(r.ddr_status));
    const double n = static_cast<double>(rows.size());
    mb.mean_ssd += r.base.mean_ssd / n, md.mean_ssd += r.ddr.mean_ssd / n;
    mb.ssim += r.base.ssim / n, md.ssim += r.ddr.ssim / n;
    mb.psnr += r.base.psnr / n, md.psnr += r.ddr.psnr / n;
  }
  s += line("mean", "", mb, md, "", "");
  return s;
}

inline int cmd_bench(const RunConfig& cfg, const std::string& out) {
  detail::require(cfg.bench_pairs >= 1, "bench: bench.pairs must be >= 1");
  detail::require(cfg.bench_workers >= 1, "bench: bench.workers must be >= 1");
  cfg.ddr.validate();
  make_dir(out);
  std::vector<BenchRow> rows(static_cast<std::size_t>(cfg.bench_pairs));
  std::vector<std::string> errors(rows.size());
  auto run_pair = [&](std::size_t i) {
    try {
      SynthSpec spec = cfg.synth;
      spec.seed = cfg.bench_first_seed + i;
      const SynthPair p = synth_pair(spec);
      const std::string dir = path_in(out, "pair_" + std::to_string(i));
      make_dir(dir);
      DdrConfig c = cfg.ddr;
      c.ddr_enabled = false;
      const RegistrationResult base = run_pipeline(p.fixed, p.moving, c);
      c.ddr_enabled = true;
      const RegistrationResult ddr = run_pipeline(p.fixed, p.moving, c);
      write_trace_csv(base.trace, path_in(dir, "trace_base.csv"));
      write_trace_csv(ddr.trace, path_in(dir, "trace_ddr.csv"));
      rows[i] = {spec.seed, base.final_metrics, ddr.final_metrics, base.status, ddr.status};
    } catch (const std::exception& e) {
      errors[i] = "pair " + std::to_string(i) + ": " + e.what();
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.bench_workers), rows.size());
  {
    std::vector<std::jthread> pool;
    std::atomic<std::size_t> next{0};
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < rows.size();) run_pair(i);
      });
  }
  for (const auto& e : errors)
    if (!e.empty()) throw InvalidInput("bench " + e);
  const std::string summary = bench_summary(rows);
  write_text(path_in(out, "summary.csv"), summary);
  std::cout << summary;
  bool aborted = false;
  for (const auto& r : rows)
    aborted = aborted || r.base_status == RunStatus::numerical_abort || r.ddr_status == RunStatus::numerical_abort;
  return aborted ? kExitNumerical : kExitOk;
}

inline RunConfig config_from(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

}  // namespace detail

/// `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& err = std::cerr) {
  CLI::App app{"Deformable registration with a learned upper-bound heatmap", "ddr"};
  app.require_subcommand(1);

  std::string config_path, fixed, moving, out, ddr_flag, solver;
  auto* reg = app.add_subcommand("register", "register a moving image onto a fixed image");
  reg->add_option("--fixed", fixed, "fixed image (.nii or .raw)");
  reg->add_option("--moving", moving, "moving image (.nii or .raw)");
  reg->add_option("--config", config_path, "key=value configuration file");
  reg->add_option("--out", out, "output directory");
  reg->add_option("--ddr", ddr_flag, "override ddr.enabled")->check(CLI::IsMember({"on", "off"}));
  reg->add_option("--solver", solver, "override reg.solver")->check(CLI::IsMember({"diffeo", "log", "lbfgs"}));

  std::string a, b;
  double L = 1.0;
  auto* met = app.add_subcommand("metrics", "print SSIM, PSNR and mean SSD of two images as JSON");
  met->add_option("--a", a, "first image")->required();
  met->add_option("--b", b, "second image")->required();
  met->add_option("--L", L, "dynamic range")->check(CLI::PositiveNumber);

  std::string spec_file, synth_out;
  auto* syn = app.add_subcommand("synth", "write a synthetic fixed/moving/truth triple");
  syn->add_option("--spec-file", spec_file, "configuration file with synth.* keys")->required();
  syn->add_option("--out", synth_out, "output directory")->required();

  std::string suite, bench_out;
  auto* ben = app.add_subcommand("bench", "paired with/without heatmap benchmark on synthetic pairs");
  ben->add_option("--suite", suite, "configuration file (synth.*, bench.* and run keys)")->required();
  ben->add_option("--out", bench_out, "output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitInput;
  }

  try {
    if (reg->parsed()) {
      RunConfig cfg = detail::config_from(config_path);
      if (!fixed.empty()) cfg.fixed = fixed;
      if (!moving.empty()) cfg.moving = moving;
      if (!out.empty()) cfg.out = out;
      if (!ddr_flag.empty()) cfg.ddr.ddr_enabled = ddr_flag == "on";
      if (!solver.empty()) cfg.ddr.reg.solver = parse_solver(solver);
      return detail::cmd_register(cfg);
    }
    if (met->parsed()) return detail::cmd_metrics(a, b, L);
    if (syn->parsed()) return detail::cmd_synth(load_config(spec_file), synth_out);
    if (ben->parsed()) return detail::cmd_bench(load_config(suite), bench_out);
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace ddr
