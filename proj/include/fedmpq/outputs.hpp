// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Result files. A run directory holds metrics.csv (one row per round),
// summary.json and config.txt (the resolved configuration). Rewriting the same
// run produces byte-identical files. An unreached target is `null` in JSON and
// `inf` in CSV.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "fedmpq/config.hpp"
#include "fedmpq/error.hpp"
#include "fedmpq/simulator.hpp"

namespace fedmpq {

inline constexpr const char* kMetricsHeader =
    "round,accuracy,loss,participants,quant_error,tau_mean,tau_max,uplink_bytes,downlink_bytes,"
    "cum_uplink_bytes,cum_downlink_bytes,weighted_total,selection";

namespace detail {

inline std::string format_csv_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return format_real(v);
}

// Layers separated by '|', per-codebook counts by ';'.
inline std::string format_selection(const std::vector<std::vector<std::size_t>>& sel) {
  std::string out;
  for (std::size_t l = 0; l < sel.size(); ++l) {
    if (l) out += '|';
    for (std::size_t n = 0; n < sel[l].size(); ++n) {
      if (n) out += ';';
      out += std::to_string(sel[l][n]);
    }
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

template <class T>
nlohmann::ordered_json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

inline std::string metrics_csv(const std::vector<RoundMetrics>& series) {
  using detail::format_csv_real;
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& m : series) {
    out += std::to_string(m.round) + ',' + format_csv_real(m.accuracy) + ',' + format_csv_real(m.loss) + ',' +
           std::to_string(m.participants) + ',' + format_csv_real(m.quant_error) + ',' +
           format_csv_real(m.tau_mean) + ',' + format_csv_real(m.tau_max) + ',' + std::to_string(m.uplink_bytes) +
           ',' + std::to_string(m.downlink_bytes) + ',' + std::to_string(m.cum_uplink) + ',' +
           std::to_string(m.cum_downlink) + ',' + format_csv_real(m.weighted_total) + ',' +
           detail::format_selection(m.selection) + "\n";
  }
  return out;
}

inline nlohmann::ordered_json summary_json(const ExperimentSummary& s, double target, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["strategy"] = s.strategy;
  j["seed"] = seed;
  j["target_accuracy"] = target;
  j["rounds_run"] = s.rounds_run;
  j["rounds_to_target"] = detail::optional_json(s.rounds_to_target);
  j["peak_accuracy"] = s.peak_accuracy;
  j["final_accuracy"] = s.final_accuracy;
  j["cost_at_target"] = detail::optional_json(s.cost_at_target);
  j["total_uplink_bytes"] = s.total_uplink;
  j["total_downlink_bytes"] = s.total_downlink;
  j["weighted_total"] = s.weighted_total;
  return j;
}

inline nlohmann::ordered_json seed_aggregate_json(const SeedAggregate& a) {
  auto finite_or_null = [](double v) {
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["seeds"] = a.seeds;
  j["reached"] = a.reached;
  j["mean_rounds_to_target"] = finite_or_null(a.mean_rounds);
  j["std_rounds_to_target"] = finite_or_null(a.std_rounds);
  j["mean_peak_accuracy"] = a.mean_peak;
  return j;
}

/// Creates `dir` and proves it is writable before any compute starts.
inline void preflight_output_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("output directory not writable: " + dir.string() + " (" + ec.message() + ")");
  const auto probe = dir / ".fedmpq_write_probe";
  {
    std::ofstream f(probe, std::ios::trunc);
    if (!f || !(f << "ok")) throw Error("output directory not writable: " + dir.string());
  }
  std::filesystem::remove(probe, ec);
}

/// Writes one run directory: metrics.csv, summary.json, config.txt.
inline void write_outputs(const std::filesystem::path& dir, const std::vector<RoundMetrics>& series,
                          const ExperimentSummary& summary, const ExperimentSpec& spec, std::uint64_t seed) {
  preflight_output_dir(dir);
  detail::write_file(dir / "metrics.csv", metrics_csv(series));
  detail::write_file(dir / "summary.json",
                     summary_json(summary, spec.sim.round.target_accuracy, seed).dump(2) + "\n");
  detail::write_file(dir / "config.txt", print_config(spec));
}

inline void write_aggregate(const std::filesystem::path& dir, const SeedAggregate& a) {
  preflight_output_dir(dir);
  detail::write_file(dir / "aggregate.json", seed_aggregate_json(a).dump(2) + "\n");
}

inline constexpr const char* kSweepHeader =
    "label,M,K,D,residual,mean_rounds_to_target,std_rounds_to_target,mean_peak_accuracy,reached,seeds";

inline std::string sweep_row(const ExperimentSpec& spec, const SeedAggregate& a) {
  using detail::format_csv_real;
  const auto& rc = spec.sim.round;
  return sweep_label(spec) + ',' + std::to_string(rc.m) + ',' + std::to_string(rc.k) + ',' + std::to_string(rc.d) +
         ',' + format_csv_real(rc.residual_ratio) + ',' + format_csv_real(a.mean_rounds) + ',' +
         format_csv_real(a.std_rounds) + ',' + format_csv_real(a.mean_peak) + ',' + std::to_string(a.reached) + ',' +
         std::to_string(a.seeds);
}

}  // namespace fedmpq
