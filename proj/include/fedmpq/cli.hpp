// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Command-line front end.
//
//   fedmpq run            one configuration, every seed
//   fedmpq sweep          grid over comma-separated --M/--K/--D/--residual
//   fedmpq verify         randomized oracle suites
//   fedmpq inspect-packet decode a serialized uplink packet or codebook set
//
// Values are layered: defaults, then --config FILE, then flags, then the
// FEDMPQ_OUT_DIR environment variable (output directory only). Every resulting
// configuration is validated before any compute starts.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 runtime error
// (including a failed verification).

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedmpq/config.hpp"
#include "fedmpq/error.hpp"
#include "fedmpq/outputs.hpp"
#include "fedmpq/simulator.hpp"
#include "fedmpq/verify.hpp"

namespace fedmpq {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

enum class Command { run, sweep, verify, inspect_packet, help };

struct CliRequest {
  Command command = Command::help;
  std::vector<ExperimentSpec> specs;  // run: one; sweep: the grid; inspect-packet: the schema source
  std::string packet_file;
  bool codebook_file = false;
  std::size_t verify_trials = 1000;
  std::uint64_t verify_seed = 1;
  std::optional<int> dump_round;
  std::string help_text;
};

class UsageError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

namespace detail {

// Config-key flags attached to one subcommand.
struct KeyFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config_file, "flat key = value configuration file");
    for (const auto& k : config_keys()) {
      options.emplace_back(k.name, sub->add_option(std::string("--") + k.name, values[k.name], k.help));
    }
  }

  [[nodiscard]] bool given(const std::string& key) const {
    for (const auto& [name, opt] : options) {
      if (name == key) return opt->count() > 0;
    }
    return false;
  }

  /// Defaults, then the file, then every flag except `skip`, then the env.
  ExperimentSpec resolve(const std::vector<std::string>& skip, const std::optional<std::string>& env_out) const {
    ExperimentSpec spec = config_file.empty() ? ExperimentSpec{} : load_config(config_file);
    for (const auto& [name, opt] : options) {
      if (opt->count() == 0) continue;
      if (std::find(skip.begin(), skip.end(), name) != skip.end()) continue;
      set_value(spec, name, values.at(name));
    }
    if (env_out && !env_out->empty()) spec.out_dir = *env_out;
    sync_model_shape(spec);
    return spec;
  }
};

template <class T>
std::vector<T> parse_axis(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (auto item : split_list(text)) {
    if constexpr (std::is_integral_v<T>) {
      out.push_back(parse_int<T>(key, item));
    } else {
      out.push_back(parse_real(key, item));
    }
  }
  return out;
}

inline std::optional<std::string> env_out_dir() {
  const char* v = std::getenv("FEDMPQ_OUT_DIR");
  return v ? std::optional<std::string>(v) : std::nullopt;
}

}  // namespace detail

/// Parses and validates a command line. Throws UsageError or ConfigError.
inline CliRequest parse_cli(int argc, const char* const* argv,
                            const std::optional<std::string>& env_out = detail::env_out_dir()) {
  CLI::App app{"Federated learning simulator with multi-codebook product quantization", "fedmpq"};
  app.require_subcommand(1);

  detail::KeyFlags run_flags;
  detail::KeyFlags sweep_flags;
  detail::KeyFlags inspect_flags;
  CliRequest req;
  int dump_round = -1;

  auto* run = app.add_subcommand("run", "run one configuration for every seed");
  run_flags.attach(run);
  run->add_option("--dump-round", dump_round, "also write the serialized uplink packets of this round");

  auto* sweep = app.add_subcommand("sweep", "grid over comma-separated --M, --K, --D and --residual values");
  sweep_flags.attach(sweep);

  auto* ver = app.add_subcommand("verify", "run the randomized oracle suites");
  ver->add_option("--trials", req.verify_trials, "instances per suite");
  ver->add_option("--seed", req.verify_seed, "suite seed");

  auto* inspect = app.add_subcommand("inspect-packet", "decode a serialized packet for debugging");
  inspect->add_option("file", req.packet_file, "packet file")->required();
  inspect->add_flag("--codebook", req.codebook_file, "the file holds a serialized codebook set");
  inspect_flags.attach(inspect);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    req.command = Command::help;
    for (auto* sub : {run, sweep, ver, inspect}) {
      if (sub->parsed()) {
        req.help_text = sub->help();
        return req;
      }
    }
    req.help_text = app.help();
    return req;
  } catch (const CLI::CallForAllHelp&) {
    req.command = Command::help;
    req.help_text = app.help("", CLI::AppFormatMode::All);
    return req;
  } catch (const CLI::ParseError& e) {
    throw UsageError(std::string(e.what()) + "\n\n" + app.help());
  }

  if (run->parsed()) {
    req.command = Command::run;
    req.specs.push_back(run_flags.resolve({}, env_out));
    if (dump_round >= 0) req.dump_round = dump_round;
  } else if (sweep->parsed()) {
    req.command = Command::sweep;
    const std::vector<std::string> axes{"M", "K", "D", "residual"};
    const ExperimentSpec base = sweep_flags.resolve(axes, env_out);
    SweepAxes grid;
    if (sweep_flags.given("M")) grid.m = detail::parse_axis<std::size_t>("M", sweep_flags.values.at("M"));
    if (sweep_flags.given("K")) grid.k = detail::parse_axis<std::size_t>("K", sweep_flags.values.at("K"));
    if (sweep_flags.given("D")) grid.d = detail::parse_axis<std::size_t>("D", sweep_flags.values.at("D"));
    if (sweep_flags.given("residual")) {
      grid.residual = detail::parse_axis<double>("residual", sweep_flags.values.at("residual"));
    }
    req.specs = expand_sweep(base, grid);
  } else if (ver->parsed()) {
    req.command = Command::verify;
    if (req.verify_trials < 1) throw UsageError("--trials must be at least 1");
  } else {
    req.command = Command::inspect_packet;
    req.specs.push_back(inspect_flags.resolve({}, env_out));
  }
  for (const auto& s : req.specs) validate(s);
  return req;
}

namespace detail {

inline std::string format_rounds(const SeedAggregate& a) {
  if (a.reached < a.seeds) return "inf (" + std::to_string(a.reached) + "/" + std::to_string(a.seeds) + " seeds reached)";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(1) << a.mean_rounds << " +- " << a.std_rounds;
  return ss.str();
}

inline std::filesystem::path seed_dir(const std::filesystem::path& root, std::uint64_t seed) {
  return root / ("seed_" + std::to_string(seed));
}

// Runs every seed of one spec into root/seed_<s>/ and returns the aggregate.
inline SeedAggregate run_spec(const ExperimentSpec& spec, const std::filesystem::path& root,
                              std::optional<int> dump_round, std::ostream& out) {
  std::vector<ExperimentSummary> summaries;
  for (std::uint64_t seed : spec.seeds) {
    SimulationConfig cfg = spec.sim;
    cfg.seed = seed;
    Simulation sim(cfg);
    const auto dir = seed_dir(root, seed);
    if (dump_round) {
      const auto pdir = dir / "packets";
      std::filesystem::create_directories(pdir);
      sim.set_packet_sink([&, pdir](int round, std::uint32_t client, const Bytes& bytes) {
        if (round != *dump_round) return;
        std::ofstream f(pdir / ("round" + std::to_string(round) + "_client" + std::to_string(client) + ".bin"),
                        std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      });
    }
    std::vector<RoundMetrics> series;
    for (std::size_t r = 0; r < cfg.round.rounds; ++r) {
      series.push_back(sim.run_round());
      if (spec.stop_at_target && series.back().accuracy >= cfg.round.target_accuracy) break;
    }
    const ExperimentSummary summary = summarize(series, cfg.round);
    write_outputs(dir, series, summary, spec, seed);
    out << "  seed " << seed << ": peak " << std::fixed << std::setprecision(4) << summary.peak_accuracy
        << ", rounds to target "
        << (summary.rounds_to_target ? std::to_string(*summary.rounds_to_target) : std::string("inf"))
        << ", weighted cost " << std::setprecision(0) << summary.weighted_total << " B\n";
    summaries.push_back(summary);
  }
  const SeedAggregate agg = aggregate_seeds(summaries);
  write_aggregate(root, agg);
  return agg;
}

inline void print_packet(const UplinkPacket& packet, std::ostream& out) {
  out << "client " << packet_client_id(packet) << ", kind ";
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ClientUpdatePacket>) {
          out << "pq, " << p.layers.size() << " layers\n";
          for (std::size_t l = 0; l < p.layers.size(); ++l) {
            const auto& u = p.layers[l];
            out << "  layer " << l << ": L=" << u.code.length << " codebook=" << u.code.codebook_index
                << " codes=" << u.code.codes.size() << " residual_entries=" << u.residual.entries.size()
                << " pseudo_rows=" << u.pseudo.size() << "\n    codes:";
            for (std::size_t i = 0; i < std::min<std::size_t>(u.code.codes.size(), 16); ++i) out << ' ' << u.code.codes[i];
            if (u.code.codes.size() > 16) out << " ...";
            out << '\n';
          }
        } else if constexpr (std::is_same_v<T, DensePacket>) {
          out << "dense, " << p.layers.size() << " layers\n";
          for (std::size_t l = 0; l < p.layers.size(); ++l) out << "  layer " << l << ": L=" << p.layers[l].size() << '\n';
        } else if constexpr (std::is_same_v<T, ScalarQuantPacket>) {
          out << "scalar, " << p.layers.size() << " layers\n";
          for (std::size_t l = 0; l < p.layers.size(); ++l) {
            out << "  layer " << l << ": L=" << p.layers[l].length << " bits=" << p.layers[l].bits
                << " range=[" << p.layers[l].lo << ", " << p.layers[l].hi << "]\n";
          }
        } else {
          out << "sparse, " << p.layers.size() << " layers\n";
          for (std::size_t l = 0; l < p.layers.size(); ++l) {
            out << "  layer " << l << ": L=" << p.layers[l].length << " entries=" << p.layers[l].entries.size() << '\n';
          }
        }
      },
      packet);
}

inline Bytes read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path);
  return Bytes(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace detail

/// Full command-line entry point; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
                   const std::optional<std::string>& env_out = detail::env_out_dir()) {
  CliRequest req;
  try {
    req = parse_cli(argc, argv, env_out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    switch (req.command) {
      case Command::help:
        out << req.help_text;
        return kExitOk;

      case Command::run: {
        const ExperimentSpec& spec = req.specs.front();
        const std::filesystem::path root = spec.out_dir;
        for (auto s : spec.seeds) preflight_output_dir(detail::seed_dir(root, s));
        out << to_string(spec.sim.round.strategy) << ", " << spec.seeds.size() << " seeds\n";
        const SeedAggregate agg = detail::run_spec(spec, root, req.dump_round, out);
        out << "rounds to target " << spec.sim.round.target_accuracy << ": " << detail::format_rounds(agg) << '\n';
        return kExitOk;
      }

      case Command::sweep: {
        const std::filesystem::path root = req.specs.front().out_dir;
        for (const auto& spec : req.specs) {
          for (auto s : spec.seeds) preflight_output_dir(detail::seed_dir(root / sweep_label(spec), s));
        }
        std::string table = std::string(kSweepHeader) + "\n";
        for (const auto& spec : req.specs) {
          out << sweep_label(spec) << '\n';
          const SeedAggregate agg = detail::run_spec(spec, root / sweep_label(spec), std::nullopt, out);
          out << "  rounds to target: " << detail::format_rounds(agg) << '\n';
          table += sweep_row(spec, agg) + "\n";
        }
        detail::write_file(root / "sweep_summary.csv", table);
        return kExitOk;
      }

      case Command::verify: {
        bool ok = true;
        for (const auto& r : verify::run_all(req.verify_trials, req.verify_seed)) {
          ok = ok && r.passed();
          out << (r.passed() ? "PASS " : "FAIL ") << r.name << ": " << r.trials - r.failures << "/" << r.trials
              << " ok, worst " << r.worst << ", " << std::fixed << std::setprecision(2) << r.seconds << " s"
              << std::defaultfloat << '\n';
          if (!r.passed()) out << "     " << r.first_failure << '\n';
        }
        return ok ? kExitOk : kExitRuntime;
      }

      case Command::inspect_packet: {
        const Bytes bytes = detail::read_bytes(req.packet_file);
        if (req.codebook_file) {
          const CodebookSet set = deserialize_codebook_set(bytes);
          out << "codebook set: layer " << set.layer_id << ", round " << set.round << ", M=" << set.count()
              << " K=" << set.codebook_size() << " D=" << set.dim() << '\n';
          for (const auto& cb : set.codebooks) {
            out << "  codebook " << cb.index() << (cb.has_zero_codeword() ? " (has zero codeword)" : "") << '\n';
          }
          return kExitOk;
        }
        const ExperimentSpec& spec = req.specs.front();
        const PacketSchema schema = make_schema(init_model(spec.sim.model, 0), spec.sim.round);
        out << bytes.size() << " bytes\n";
        detail::print_packet(deserialize_packet(bytes, schema), out);
        return kExitOk;
      }
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace fedmpq
