#pragma once

// trace.csv and report.json writers. Trace values go through one formatter
// (12 significant digits) so the CSV and the JSON rows agree exactly.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddr/config.hpp"
#include "ddr/driver.hpp"
#include "ddr/io.hpp"

namespace ddr {

inline constexpr int kReportVersion = 1;

inline std::string format_sig12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string trace_csv_header() { return "outer_iter,C,C_U,t,gap"; }

inline std::string trace_csv_row(const TraceRecord& r) {
  return std::to_string(r.outer_iter) + "," + format_sig12(r.C) + "," + format_sig12(r.C_U) + "," + format_sig12(r.t) +
         "," + format_sig12(r.gap);
}

inline std::string trace_csv(const std::vector<TraceRecord>& trace) {
  std::string s = trace_csv_header() + "\n";
  for (const auto& r : trace) s += trace_csv_row(r) + "\n";
  return s;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

inline void write_trace_csv(const std::vector<TraceRecord>& trace, const std::string& path) {
  write_text(path, trace_csv(trace));
}

inline nlohmann::json metrics_json(const MetricsReport& m) {
  nlohmann::json j;
  j["ssim"] = m.ssim;
  if (m.psnr_infinite()) j["psnr"] = "inf";
  else j["psnr"] = m.psnr;
  j["mean_ssd"] = m.mean_ssd;
  j["dynamic_range"] = m.dynamic_range;
  return j;
}

inline nlohmann::json normalization_json(const Normalization& n) {
  return {{"min", n.min}, {"max", n.max}, {"applied", n.applied}, {"constant", n.constant}};
}

inline nlohmann::json trace_json(const std::vector<TraceRecord>& trace) {
  auto rounded = [](double v) { return std::stod(format_sig12(v)); };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : trace) {
    nlohmann::json row{{"outer_iter", r.outer_iter},
                       {"C", rounded(r.C)},
                       {"C_U", rounded(r.C_U)},
                       {"t", rounded(r.t)},
                       {"gap", rounded(r.gap)}};
    if (r.metrics) row["metrics"] = metrics_json(*r.metrics);
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Everything report.json holds besides the registration result itself.
struct ReportContext {
  RunConfig config;
  Normalization fixed_norm;
  Normalization moving_norm;
  std::vector<std::size_t> dims;
  std::vector<std::size_t> padded_dims;
  std::vector<double> spacing;
  std::vector<std::pair<std::string, std::string>> files;
};

inline nlohmann::json report_json(const RegistrationResult& res, const ReportContext& ctx) {
  nlohmann::json j;
  j["version"] = kReportVersion;
  j["status"] = status_name(res.status);
  j["diagnostic"] = res.diagnostic;
  j["solver"] = solver_name(ctx.config.ddr.reg.solver);
  j["ddr"] = ctx.config.ddr.ddr_enabled;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : config_entries(ctx.config)) cfg[k] = v;
  j["config"] = cfg;
  j["normalization"] = {{"fixed", normalization_json(ctx.fixed_norm)}, {"moving", normalization_json(ctx.moving_norm)}};
  j["grid"] = {{"dims", ctx.dims}, {"padded_dims", ctx.padded_dims}, {"spacing", ctx.spacing}};
  j["trace"] = trace_json(res.trace);
  j["final_metrics"] = metrics_json(res.final_metrics);
  j["skipped_fcnn_steps"] = res.skipped_fcnn_steps;
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [k, v] : ctx.files) files[k] = v;
  j["files"] = files;
  return j;
}

inline void write_report(const RegistrationResult& res, const ReportContext& ctx, const std::string& path) {
  write_text(path, report_json(res, ctx).dump(2) + "\n");
}

}  // namespace ddr
