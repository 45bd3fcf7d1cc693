// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/**
 * Round orchestration. Every round runs five steps:
 *
 *   pull      each sampled client downloads the model and the codebook sets
 *   update    clients train one local epoch and compress their update
 *   push      packets are serialized, metered and handed to the aggregator
 *   model     the aggregate is reconstructed and applied with the server rate
 *   codebook  next round's codebooks are built from public data and the
 *             pooled pseudo-centroids
 *
 * Communication is metered from the actual serialized byte counts. The
 * weighted total charges downlink at 1/8 of uplink.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fedmpq/baselines.hpp"
#include "fedmpq/codebook_service.hpp"
#include "fedmpq/dataset.hpp"
#include "fedmpq/model.hpp"
#include "fedmpq/packet.hpp"
#include "fedmpq/pq_codec.hpp"
#include "fedmpq/secure_agg.hpp"
#include "fedmpq/seed.hpp"
#include "fedmpq/train.hpp"

namespace fedmpq {

enum class Strategy { fedmpq, spq, scalar_quant, topk_prune, uncompressed };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::fedmpq: return "fedmpq";
    case Strategy::spq: return "spq";
    case Strategy::scalar_quant: return "scalar_quant";
    case Strategy::topk_prune: return "topk_prune";
    case Strategy::uncompressed: return "uncompressed";
  }
  return "?";
}

inline bool is_pq(Strategy s) { return s == Strategy::fedmpq || s == Strategy::spq; }

struct RoundConfig {
  std::size_t clients_per_round = 20;  // N
  std::size_t m = 4;
  std::size_t k = 32;
  std::size_t d = 2;
  double residual_ratio = 0.001;  // rho
  double gamma = 0.99;
  Strategy strategy = Strategy::fedmpq;
  unsigned sq_bits = 8;
  double topk_ratio = 0.1;
  std::size_t rounds = 200;
  double target_accuracy = 0.78;
  bool use_public_data = true;
  bool weighted_pseudo = true;
  std::size_t part_sample = 0;
  std::size_t kmeans_iters = 25;
  std::size_t threads = 1;
  friend bool operator==(const RoundConfig&, const RoundConfig&) = default;
};

struct SimulationConfig {
  RoundConfig round;
  FederationConfig federation;
  ModelSpec model;
  TrainConfig train;
  std::uint64_t seed = 1;
  friend bool operator==(const SimulationConfig&, const SimulationConfig&) = default;
};

/// Codebook geometry actually used by a strategy (spq pins M to 1).
inline std::size_t effective_m(const RoundConfig& rc) {
  return rc.strategy == Strategy::spq ? 1 : rc.m;
}

inline void validate(const RoundConfig& rc) {
  if (rc.clients_per_round < 1) throw ConfigError("clients per round must be at least 1");
  if (rc.residual_ratio < 0.0 || rc.residual_ratio > 1.0) {
    throw ConfigError("residual ratio must lie in [0, 1]");
  }
  if (is_pq(rc.strategy)) {
    if (rc.m < 1 || rc.m > 255) throw ConfigError("M must lie in [1, 255]");
    if (!is_power_of_two(rc.k)) throw ConfigError("K must be a power of two");
    if (rc.d < 1) throw ConfigError("D must be at least 1");
    if (!(rc.gamma > 0.0 && rc.gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (rc.strategy == Strategy::spq && !rc.use_public_data) {
      throw ConfigError("spq needs public data");
    }
  }
  if (rc.strategy == Strategy::scalar_quant && (rc.sq_bits < 1 || rc.sq_bits > 16)) {
    throw ConfigError("scalar quantization bits must lie in [1, 16]");
  }
  if (rc.strategy == Strategy::topk_prune && !(rc.topk_ratio > 0.0 && rc.topk_ratio <= 1.0)) {
    throw ConfigError("top-k ratio must lie in (0, 1]");
  }
  if (rc.threads < 1) throw ConfigError("threads must be at least 1");
}

/// Per-round byte counts and their running totals.
class CommLedger {
 public:
  struct Entry {
    std::size_t uplink = 0;
    std::size_t downlink = 0;
  };

  void record(std::size_t uplink, std::size_t downlink) {
    rounds_.push_back({uplink, downlink});
    uplink_ += uplink;
    downlink_ += downlink;
  }

  [[nodiscard]] std::size_t total_uplink() const { return uplink_; }
  [[nodiscard]] std::size_t total_downlink() const { return downlink_; }
  /// downlink / 8 + uplink.
  [[nodiscard]] double weighted_total() const { return weighted(uplink_, downlink_); }
  [[nodiscard]] const std::vector<Entry>& rounds() const { return rounds_; }

  static double weighted(std::size_t uplink, std::size_t downlink) {
    return static_cast<double>(downlink) / 8.0 + static_cast<double>(uplink);
  }

 private:
  std::vector<Entry> rounds_;
  std::size_t uplink_ = 0;
  std::size_t downlink_ = 0;
};

struct RoundMetrics {
  int round = 0;  // 1-based count of completed rounds
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t participants = 0;
  double quant_error = 0.0;  // mean over clients of the summed squared PQ/compressor error
  double tau_mean = 0.0;
  double tau_max = 0.0;
  std::vector<std::vector<std::size_t>> selection;  // per layer, per codebook
  std::size_t uplink_bytes = 0;
  std::size_t downlink_bytes = 0;
  std::size_t cum_uplink = 0;
  std::size_t cum_downlink = 0;
  double weighted_total = 0.0;
};

/// Model broadcast format: layer_count u16, then per layer L u32 and L f32.
inline Bytes serialize_model(const ModelState& m) {
  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(m.layers.size()));
  for (const auto& l : m.layers) {
    w.u32(static_cast<std::uint32_t>(l.values.size()));
    for (float v : l.values) w.f32(v);
  }
  return std::move(w).take();
}

/// One client's compressed update plus client-side diagnostics.
struct ClientResult {
  std::uint32_t client_id = 0;
  UplinkPacket packet;
  double squared_error = 0.0;
  double tau = 0.0;
  std::vector<int> chosen;  // codebook per layer (pq only)
};

inline PacketSchema make_schema(const ModelState& model, const RoundConfig& rc) {
  PacketSchema s;
  for (std::size_t len : model.layer_sizes()) {
    s.push_back(is_pq(rc.strategy) ? LayerSchema{len, effective_m(rc), rc.k, rc.d}
                                   : LayerSchema{len, 1, 2, 1});
  }
  return s;
}

/// Client Update: compress a trained update according to the strategy.
inline ClientResult compress_update(std::uint32_t client_id, const Update& z, const RoundConfig& rc,
                                    const std::vector<CodebookSet>& codebooks) {
  ClientResult out;
  out.client_id = client_id;
  double err = 0.0;
  double norm = 0.0;
  for (const auto& layer : z) {
    for (float v : layer) norm += static_cast<double>(v) * v;
  }
  auto add_error = [&](std::span<const float> a, std::span<const float> b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double diff = static_cast<double>(a[i]) - b[i];
      err += diff * diff;
    }
  };

  switch (rc.strategy) {
    case Strategy::fedmpq:
    case Strategy::spq: {
      ClientUpdatePacket p{client_id, {}};
      for (std::size_t l = 0; l < z.size(); ++l) {
        EncodedLayer e = encode_layer(z[l], codebooks[l].codebooks, rc.residual_ratio, rc.gamma);
        // Kept residual entries cancel their share of the PQ error.
        double kept = 0.0;
        for (const auto& r : e.update.residual.entries) kept += static_cast<double>(r.value) * r.value;
        err += std::max(0.0, e.squared_error - kept);
        out.chosen.push_back(e.update.code.codebook_index);
        p.layers.push_back(std::move(e.update));
      }
      out.packet = std::move(p);
      break;
    }
    case Strategy::scalar_quant: {
      ScalarQuantPacket p = baseline_scalar_quantize(client_id, z, rc.sq_bits);
      for (std::size_t l = 0; l < z.size(); ++l) add_error(z[l], scalar_dequantize(p.layers[l]));
      out.packet = std::move(p);
      break;
    }
    case Strategy::topk_prune: {
      SparsePacket p = baseline_topk(client_id, z, rc.topk_ratio);
      for (std::size_t l = 0; l < z.size(); ++l) add_error(z[l], densify(p.layers[l]));
      out.packet = std::move(p);
      break;
    }
    case Strategy::uncompressed:
      out.packet = dense_packet(client_id, z);
      break;
  }
  out.squared_error = err;
  out.tau = norm > 0.0 ? std::sqrt(err / norm) : 0.0;
  return out;
}

class Simulation {
 public:
  explicit Simulation(SimulationConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_.round);
    cfg_.federation.seed = derive_seed(cfg_.seed, Stream::data);
    fed_ = gen_synthetic_federation(cfg_.federation);
    if (cfg_.model.input_dim != cfg_.federation.dim || cfg_.model.classes != cfg_.federation.classes) {
      throw ConfigError("model input/classes must match the federation");
    }
    if (cfg_.round.clients_per_round > fed_.clients.size()) {
      throw ConfigError("clients per round exceeds the federation size");
    }
    model_ = init_model(cfg_.model, derive_seed(cfg_.seed, Stream::model_init));
    schema_ = make_schema(model_, cfg_.round);
    if (is_pq(cfg_.round.strategy)) codebooks_ = next_codebooks({});
  }

  [[nodiscard]] const ModelState& model() const { return model_; }
  [[nodiscard]] const FederationData& federation() const { return fed_; }
  [[nodiscard]] const std::vector<CodebookSet>& codebooks() const { return codebooks_; }
  [[nodiscard]] const CommLedger& ledger() const { return ledger_; }
  [[nodiscard]] const SimulationConfig& config() const { return cfg_; }
  [[nodiscard]] const PacketSchema& schema() const { return schema_; }
  [[nodiscard]] int round() const { return model_.round; }
  [[nodiscard]] const std::vector<std::string>& warnings() const { return warnings_; }

  /// Observes every serialized uplink packet before submission.
  using PacketSink = std::function<void(int round, std::uint32_t client_id, const Bytes& packet)>;
  void set_packet_sink(PacketSink sink) { sink_ = std::move(sink); }

  /// Uniform sample without replacement, returned in ascending client order.
  [[nodiscard]] std::vector<std::uint32_t> sample_clients(int round) const {
    std::vector<std::uint32_t> ids(fed_.clients.size());
    std::iota(ids.begin(), ids.end(), 0u);
    shuffle_indices(ids, derive_seed(cfg_.seed, Stream::sampling, {static_cast<std::uint64_t>(round)}));
    ids.resize(cfg_.round.clients_per_round);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  RoundMetrics run_round() {
    const RoundConfig& rc = cfg_.round;
    const int r = model_.round;
    const auto ids = sample_clients(r);

    // Pull.
    std::size_t per_client_down = serialize_model(model_).size();
    for (const auto& set : codebooks_) per_client_down += serialize_codebook_set(set).size();
    const std::size_t downlink = per_client_down * ids.size();

    // Client Update (clients are independent; results are kept in id order).
    std::vector<std::optional<ClientResult>> results(ids.size());
    auto work = [&](std::size_t i) {
      try {
        const Update z = local_train(model_, fed_.clients[ids[i]], cfg_.train,
                                     derive_seed(cfg_.seed, Stream::client_train,
                                                 {static_cast<std::uint64_t>(r), ids[i]}));
        results[i] = compress_update(ids[i], z, rc, codebooks_);
      } catch (const Error&) {
        results[i].reset();  // failed clients drop out of the round
      }
    };
    run_parallel(ids.size(), work);

    // Push.
    SecureAggregator agg(schema_);
    std::size_t uplink = 0;
    RoundMetrics m;
    m.selection.assign(schema_.size(), std::vector<std::size_t>(effective_m(rc), 0));
    double err_sum = 0.0;
    double tau_sum = 0.0;
    for (auto& res : results) {
      if (!res) continue;
      const Bytes bytes = serialize_packet(res->packet, schema_);
      if (sink_) sink_(r, res->client_id, bytes);
      try {
        agg.submit(bytes);
      } catch (const RejectedPacket&) {
        continue;
      }
      uplink += bytes.size();
      err_sum += res->squared_error;
      tau_sum += res->tau;
      m.tau_max = std::max(m.tau_max, res->tau);
      for (std::size_t l = 0; l < res->chosen.size(); ++l) {
        ++m.selection[l][static_cast<std::size_t>(res->chosen[l])];
      }
    }
    m.participants = agg.participants();

    // Model Update.
    auto pseudo = agg.take_pseudo_centroids();
    const Update g = finalize(std::move(agg), codebooks_);
    model_ = apply_server_update(std::move(model_), g, cfg_.train.lr_server);

    // Codebook Update.
    if (is_pq(rc.strategy)) codebooks_ = next_codebooks(pseudo);

    ledger_.record(uplink, downlink);
    const EvalResult ev = evaluate(model_, fed_.test_set);
    m.round = model_.round;
    m.accuracy = ev.accuracy;
    m.loss = ev.loss;
    const auto n = static_cast<double>(m.participants);
    m.quant_error = err_sum / n;
    m.tau_mean = tau_sum / n;
    m.uplink_bytes = uplink;
    m.downlink_bytes = downlink;
    m.cum_uplink = ledger_.total_uplink();
    m.cum_downlink = ledger_.total_downlink();
    m.weighted_total = ledger_.weighted_total();
    return m;
  }

 private:
  std::vector<CodebookSet> next_codebooks(const std::vector<std::vector<PseudoCentroidSet>>& pseudo) {
    const RoundConfig& rc = cfg_.round;
    Update public_update;
    if (rc.use_public_data) {
      public_update = simulate_public_gradient(
          model_, fed_.public_set, cfg_.train,
          derive_seed(cfg_.seed, Stream::public_train, {static_cast<std::uint64_t>(model_.round)}));
    }
    CodebookServiceConfig cs;
    cs.m = effective_m(rc);
    cs.k = rc.k;
    cs.d = rc.d;
    cs.max_iters = rc.kmeans_iters;
    cs.weighted = rc.weighted_pseudo;
    cs.part_sample = rc.part_sample;
    cs.seed = derive_seed(cfg_.seed, Stream::kmeans);
    return generate_codebooks(public_update, pseudo, codebooks_, model_.layers.size(), model_.round, cs,
                              &warnings_);
  }

  template <class F>
  void run_parallel(std::size_t n, F&& f) {
    const std::size_t t = std::min(cfg_.round.threads, n);
    if (t <= 1) {
      for (std::size_t i = 0; i < n; ++i) f(i);
      return;
    }
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < t; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += t) f(i);
      });
    }
  }

  SimulationConfig cfg_;
  FederationData fed_;
  ModelState model_;
  PacketSchema schema_;
  std::vector<CodebookSet> codebooks_;
  CommLedger ledger_;
  std::vector<std::string> warnings_;
  PacketSink sink_;
};

struct ExperimentSummary {
  std::string strategy;
  std::size_t rounds_run = 0;
  std::optional<int> rounds_to_target;  // empty: target never reached
  double peak_accuracy = 0.0;
  double final_accuracy = 0.0;
  std::optional<double> cost_at_target;  // weighted total when the target was first hit
  std::size_t total_uplink = 0;
  std::size_t total_downlink = 0;
  double weighted_total = 0.0;
};

struct ExperimentResult {
  std::vector<RoundMetrics> series;
  ExperimentSummary summary;
};

struct StopRule {
  std::size_t max_rounds = 100;
  bool at_target = false;  // stop as soon as the target accuracy is reached
};

inline ExperimentSummary summarize(const std::vector<RoundMetrics>& series, const RoundConfig& rc) {
  ExperimentSummary s;
  s.strategy = to_string(rc.strategy);
  s.rounds_run = series.size();
  for (const auto& m : series) {
    s.peak_accuracy = std::max(s.peak_accuracy, m.accuracy);
    if (!s.rounds_to_target && m.accuracy >= rc.target_accuracy) {
      s.rounds_to_target = m.round;
      s.cost_at_target = m.weighted_total;
    }
  }
  if (!series.empty()) {
    s.final_accuracy = series.back().accuracy;
    s.total_uplink = series.back().cum_uplink;
    s.total_downlink = series.back().cum_downlink;
    s.weighted_total = series.back().weighted_total;
  }
  return s;
}

inline ExperimentResult run_experiment(const SimulationConfig& cfg, const StopRule& stop) {
  Simulation sim(cfg);
  ExperimentResult res;
  for (std::size_t r = 0; r < stop.max_rounds; ++r) {
    res.series.push_back(sim.run_round());
    if (stop.at_target && res.series.back().accuracy >= cfg.round.target_accuracy) break;
  }
  res.summary = summarize(res.series, cfg.round);
  return res;
}

/// Mean and standard deviation of rounds-to-target across seeds; infinite
/// when any seed never reached the target.
struct SeedAggregate {
  double mean_rounds = 0.0;
  double std_rounds = 0.0;
  double mean_peak = 0.0;
  std::size_t reached = 0;
  std::size_t seeds = 0;
};

inline SeedAggregate aggregate_seeds(const std::vector<ExperimentSummary>& runs) {
  SeedAggregate a;
  a.seeds = runs.size();
  if (runs.empty()) return a;
  double sum = 0.0;
  double sq = 0.0;
  double peak = 0.0;
  for (const auto& r : runs) {
    peak += r.peak_accuracy;
    if (r.rounds_to_target) {
      ++a.reached;
      sum += *r.rounds_to_target;
      sq += static_cast<double>(*r.rounds_to_target) * *r.rounds_to_target;
    }
  }
  a.mean_peak = peak / static_cast<double>(runs.size());
  if (a.reached < runs.size()) {
    a.mean_rounds = std::numeric_limits<double>::infinity();
    a.std_rounds = std::numeric_limits<double>::infinity();
    return a;
  }
  const auto n = static_cast<double>(runs.size());
  a.mean_rounds = sum / n;
  a.std_rounds = std::sqrt(std::max(0.0, sq / n - a.mean_rounds * a.mean_rounds));
  return a;
}

}  // namespace fedmpq
