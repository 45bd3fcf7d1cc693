// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Experiment configuration as flat `key = value` text. One key table drives
// parsing, printing and the command-line flags, so every key is reachable the
// same way from a file or a flag. print_config emits every key, which makes
// parse_config(print_config(s)) == s.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fedmpq/error.hpp"
#include "fedmpq/simulator.hpp"

namespace fedmpq {

struct ExperimentSpec {
  SimulationConfig sim;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string out_dir = "fedmpq_out";
  bool stop_at_target = false;
  friend bool operator==(const ExperimentSpec&, const ExperimentSpec&) = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] inline void bad_value(std::string_view key, std::string_view value, std::string_view why) {
  throw ConfigError("invalid value for " + std::string(key) + ": '" + std::string(value) + "' (" +
                    std::string(why) + ")");
}

template <class T>
T parse_int(std::string_view key, std::string_view v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "expected an integer");
  return out;
}

inline double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "expected a number");
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "expected true or false");
}

// Shortest representation that reads back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline Strategy parse_strategy(std::string_view v) {
  for (Strategy s : {Strategy::fedmpq, Strategy::spq, Strategy::scalar_quant, Strategy::topk_prune,
                     Strategy::uncompressed}) {
    if (v == to_string(s)) return s;
  }
  bad_value("strategy", v, "expected fedmpq, spq, scalar_quant, topk_prune or uncompressed");
}

struct Key {
  const char* name;
  const char* help;
  std::function<std::string(const ExperimentSpec&)> get;
  std::function<void(ExperimentSpec&, std::string_view)> set;
};

}  // namespace detail

/// Every configuration key in print order.
inline const std::vector<detail::Key>& config_keys() {
  using detail::format_real;
  using detail::parse_bool;
  using detail::parse_real;
  using S = ExperimentSpec;
  using std::to_string;
  // Each accessor is generic over constness so one lambda serves get and set.
  auto size_key = [](const char* n, const char* h, auto get_ref) {
    return detail::Key{n, h, [=](const S& s) { return to_string(get_ref(s)); },
                       [=](S& s, std::string_view v) { get_ref(s) = detail::parse_int<std::size_t>(n, v); }};
  };
  auto real_key = [](const char* n, const char* h, auto get_ref) {
    return detail::Key{n, h, [=](const S& s) { return format_real(get_ref(s)); },
                       [=](S& s, std::string_view v) { get_ref(s) = parse_real(n, v); }};
  };
  auto bool_key = [](const char* n, const char* h, auto get_ref) {
    return detail::Key{n, h, [=](const S& s) { return std::string(get_ref(s) ? "true" : "false"); },
                       [=](S& s, std::string_view v) { get_ref(s) = parse_bool(n, v); }};
  };

  static const std::vector<detail::Key> keys = {
      {"strategy", "fedmpq | spq | scalar_quant | topk_prune | uncompressed",
       [](const S& s) { return std::string(to_string(s.sim.round.strategy)); },
       [](S& s, std::string_view v) { s.sim.round.strategy = detail::parse_strategy(v); }},
      size_key("clients_per_round", "clients sampled per round (N)", [](auto& s) -> auto& { return s.sim.round.clients_per_round; }),
      size_key("M", "codebooks per layer", [](auto& s) -> auto& { return s.sim.round.m; }),
      size_key("K", "codewords per codebook (power of two)", [](auto& s) -> auto& { return s.sim.round.k; }),
      size_key("D", "codeword length", [](auto& s) -> auto& { return s.sim.round.d; }),
      real_key("residual", "fraction of residual entries uploaded (rho)", [](auto& s) -> auto& { return s.sim.round.residual_ratio; }),
      real_key("gamma", "pseudo-centroid EMA factor", [](auto& s) -> auto& { return s.sim.round.gamma; }),
      {"sq_bits", "scalar quantization bits",
       [](const S& s) { return to_string(s.sim.round.sq_bits); },
       [](S& s, std::string_view v) { s.sim.round.sq_bits = detail::parse_int<unsigned>("sq_bits", v); }},
      real_key("topk_ratio", "kept fraction for topk_prune", [](auto& s) -> auto& { return s.sim.round.topk_ratio; }),
      size_key("rounds", "maximum rounds", [](auto& s) -> auto& { return s.sim.round.rounds; }),
      real_key("target_accuracy", "accuracy defining rounds-to-target", [](auto& s) -> auto& { return s.sim.round.target_accuracy; }),
      bool_key("use_public_data", "learn codebook 0 from the public set", [](auto& s) -> auto& { return s.sim.round.use_public_data; }),
      bool_key("weighted_pseudo", "weight pseudo-centroids by usage", [](auto& s) -> auto& { return s.sim.round.weighted_pseudo; }),
      size_key("part_sample", "pseudo-centroids drawn per part, 0 = all", [](auto& s) -> auto& { return s.sim.round.part_sample; }),
      size_key("kmeans_iters", "Lloyd iterations", [](auto& s) -> auto& { return s.sim.round.kmeans_iters; }),
      size_key("threads", "client worker threads", [](auto& s) -> auto& { return s.sim.round.threads; }),
      size_key("n_clients", "federation size", [](auto& s) -> auto& { return s.sim.federation.n_clients; }),
      size_key("classes", "label count", [](auto& s) -> auto& { return s.sim.federation.classes; }),
      size_key("dim", "feature dimension", [](auto& s) -> auto& { return s.sim.federation.dim; }),
      size_key("samples_per_client", "training rows per client", [](auto& s) -> auto& { return s.sim.federation.samples_per_client; }),
      real_key("alpha", "Dirichlet label concentration", [](auto& s) -> auto& { return s.sim.federation.alpha; }),
      size_key("public_size", "server public rows", [](auto& s) -> auto& { return s.sim.federation.public_size; }),
      real_key("public_mismatch", "public label skew toward class 0, in [0, 1]", [](auto& s) -> auto& { return s.sim.federation.public_mismatch; }),
      size_key("test_size", "held-out rows", [](auto& s) -> auto& { return s.sim.federation.test_size; }),
      real_key("class_sep", "class-mean spread", [](auto& s) -> auto& { return s.sim.federation.class_sep; }),
      {"model", "logreg | mlp",
       [](const S& s) { return std::string(s.sim.model.kind == ModelKind::mlp ? "mlp" : "logreg"); },
       [](S& s, std::string_view v) {
         if (v == "mlp") s.sim.model.kind = ModelKind::mlp;
         else if (v == "logreg") s.sim.model.kind = ModelKind::logreg;
         else detail::bad_value("model", v, "expected logreg or mlp");
       }},
      size_key("hidden", "MLP hidden width", [](auto& s) -> auto& { return s.sim.model.hidden; }),
      real_key("lr_local", "client learning rate", [](auto& s) -> auto& { return s.sim.train.lr_local; }),
      real_key("lr_server", "server learning rate", [](auto& s) -> auto& { return s.sim.train.lr_server; }),
      size_key("local_epochs", "client epochs per round", [](auto& s) -> auto& { return s.sim.train.local_epochs; }),
      size_key("batch_size", "client minibatch size", [](auto& s) -> auto& { return s.sim.train.batch_size; }),
      {"seeds", "comma-separated master seeds",
       [](const S& s) {
         std::string out;
         for (std::size_t i = 0; i < s.seeds.size(); ++i) out += (i ? "," : "") + to_string(s.seeds[i]);
         return out;
       },
       [](S& s, std::string_view v) {
         s.seeds.clear();
         for (auto item : detail::split_list(v)) s.seeds.push_back(detail::parse_int<std::uint64_t>("seeds", item));
       }},
      {"out_dir", "output directory",
       [](const S& s) { return s.out_dir; },
       [](S& s, std::string_view v) { s.out_dir = std::string(v); }},
      bool_key("stop_at_target", "stop a run once the target is reached", [](auto& s) -> auto& { return s.stop_at_target; }),
  };
  return keys;
}

inline const detail::Key* find_key(std::string_view name) {
  for (const auto& k : config_keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

inline void set_value(ExperimentSpec& spec, std::string_view key, std::string_view value) {
  const detail::Key* k = find_key(key);
  if (k == nullptr) throw ConfigError("unknown key '" + std::string(key) + "'");
  k->set(spec, detail::trim(value));
}

/// Keeps the model shape in step with the federation it trains on.
inline void sync_model_shape(ExperimentSpec& spec) {
  spec.sim.model.input_dim = spec.sim.federation.dim;
  spec.sim.model.classes = spec.sim.federation.classes;
}

/// Reads `key = value` lines over `base`. Blank lines and `#` comments are
/// skipped; unknown and repeated keys are errors.
inline ExperimentSpec parse_config(std::string_view text, ExperimentSpec base = {}) {
  std::map<std::string, int> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != line.npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == line.npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key(detail::trim(line.substr(0, eq)));
    if (!seen.emplace(key, line_no).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": repeated key '" + key + "'");
    }
    set_value(base, key, line.substr(eq + 1));
  }
  sync_model_shape(base);
  return base;
}

inline ExperimentSpec load_config(const std::string& path, ExperimentSpec base = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

inline std::string print_config(const ExperimentSpec& spec) {
  std::string out;
  for (const auto& k : config_keys()) out += std::string(k.name) + " = " + k.get(spec) + "\n";
  return out;
}

/// Checks everything a run needs before any compute starts.
inline void validate(const ExperimentSpec& spec) {
  const auto& f = spec.sim.federation;
  const auto& m = spec.sim.model;
  const auto& t = spec.sim.train;
  validate(spec.sim.round);
  if (f.n_clients < 1) throw ConfigError("n_clients must be at least 1");
  if (spec.sim.round.clients_per_round > f.n_clients) {
    throw ConfigError("clients_per_round exceeds n_clients");
  }
  if (f.classes < 2) throw ConfigError("classes must be at least 2");
  if (f.dim < 1) throw ConfigError("dim must be at least 1");
  if (f.samples_per_client < 1) throw ConfigError("samples_per_client must be at least 1");
  if (!(f.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (f.public_mismatch < 0.0 || f.public_mismatch > 1.0) throw ConfigError("public_mismatch must lie in [0, 1]");
  if (f.test_size < 1) throw ConfigError("test_size must be at least 1");
  if (f.class_sep < 0.0) throw ConfigError("class_sep must be non-negative");
  if (spec.sim.round.use_public_data && is_pq(spec.sim.round.strategy) && f.public_size == 0) {
    throw ConfigError("use_public_data needs public_size > 0");
  }
  if (m.input_dim != f.dim || m.classes != f.classes) throw ConfigError("model shape does not match the data");
  if (m.kind == ModelKind::mlp && (m.hidden < 1 || m.hidden > 64)) throw ConfigError("hidden must lie in [1, 64]");
  if (!(t.lr_local > 0.0) || !(t.lr_server > 0.0)) throw ConfigError("learning rates must be positive");
  if (t.local_epochs < 1 || t.batch_size < 1) throw ConfigError("local_epochs and batch_size must be at least 1");
  if (spec.seeds.empty()) throw ConfigError("at least one seed is required");
  if (spec.out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

/// Grid axes for a sweep; an empty axis keeps the base value.
struct SweepAxes {
  std::vector<std::size_t> m;
  std::vector<std::size_t> k;
  std::vector<std::size_t> d;
  std::vector<double> residual;
};

/// Cartesian product in M, K, D, residual order (residual varies fastest).
inline std::vector<ExperimentSpec> expand_sweep(const ExperimentSpec& base, const SweepAxes& axes) {
  const auto& rc = base.sim.round;
  const auto m = axes.m.empty() ? std::vector{rc.m} : axes.m;
  const auto k = axes.k.empty() ? std::vector{rc.k} : axes.k;
  const auto d = axes.d.empty() ? std::vector{rc.d} : axes.d;
  const auto r = axes.residual.empty() ? std::vector{rc.residual_ratio} : axes.residual;
  std::vector<ExperimentSpec> out;
  for (auto mi : m) {
    for (auto ki : k) {
      for (auto di : d) {
        for (auto ri : r) {
          ExperimentSpec s = base;
          s.sim.round.m = mi;
          s.sim.round.k = ki;
          s.sim.round.d = di;
          s.sim.round.residual_ratio = ri;
          out.push_back(std::move(s));
        }
      }
    }
  }
  return out;
}

/// Directory-safe label for one sweep point.
inline std::string sweep_label(const ExperimentSpec& s) {
  const auto& rc = s.sim.round;
  return "M" + std::to_string(rc.m) + "_K" + std::to_string(rc.k) + "_D" + std::to_string(rc.d) + "_rho" +
         detail::format_real(rc.residual_ratio);
}

}  // namespace fedmpq
