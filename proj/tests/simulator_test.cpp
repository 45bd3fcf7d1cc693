// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "fedmpq/simulator.hpp"

namespace fedmpq {
namespace {

SimulationConfig small_config(Strategy s = Strategy::fedmpq) {
  SimulationConfig c;
  c.federation.n_clients = 20;
  c.federation.dim = 10;
  c.federation.classes = 4;
  c.federation.test_size = 200;
  c.model = {ModelKind::mlp, 10, 8, 4};
  c.round.strategy = s;
  c.round.clients_per_round = 5;
  c.round.m = 2;
  c.round.k = 8;
  c.round.d = 2;
  c.round.residual_ratio = 0.01;
  c.seed = 3;
  return c;
}

struct Captured {
  std::vector<Bytes> packets;
  std::vector<RoundMetrics> metrics;
  ModelState model;
};

Captured capture(const SimulationConfig& cfg, int rounds) {
  Simulation sim(cfg);
  Captured out;
  sim.set_packet_sink([&](int, std::uint32_t, const Bytes& b) { out.packets.push_back(b); });
  for (int r = 0; r < rounds; ++r) out.metrics.push_back(sim.run_round());
  out.model = sim.model();
  return out;
}

double max_rel_diff(const ModelState& a, const ModelState& b) {
  double worst = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    for (std::size_t i = 0; i < a.layers[l].values.size(); ++i) {
      const double x = a.layers[l].values[i];
      const double y = b.layers[l].values[i];
      worst = std::max(worst, std::fabs(x - y) / std::max(1.0, std::fabs(y)));
    }
  }
  return worst;
}

TEST(Simulation, DeterministicUnderSeed) {
  for (Strategy s : {Strategy::fedmpq, Strategy::uncompressed}) {
    const Captured a = capture(small_config(s), 3);
    const Captured b = capture(small_config(s), 3);
    EXPECT_EQ(a.packets, b.packets);
    EXPECT_EQ(a.model, b.model);
    for (std::size_t r = 0; r < a.metrics.size(); ++r) {
      EXPECT_EQ(a.metrics[r].accuracy, b.metrics[r].accuracy);
      EXPECT_EQ(a.metrics[r].uplink_bytes, b.metrics[r].uplink_bytes);
    }
  }
}

TEST(Simulation, ThreadCountDoesNotChangeResults) {
  SimulationConfig one = small_config();
  SimulationConfig many = small_config();
  many.round.threads = 4;
  const Captured a = capture(one, 3);
  const Captured b = capture(many, 3);
  EXPECT_EQ(a.packets, b.packets);
  EXPECT_EQ(a.model, b.model);
}

TEST(Simulation, FullResidualMatchesUncompressed) {
  SimulationConfig pq = small_config();
  pq.round.residual_ratio = 1.0;
  const Captured a = capture(pq, 10);
  const Captured b = capture(small_config(Strategy::uncompressed), 10);
  EXPECT_LE(max_rel_diff(a.model, b.model), 1e-5);
}

TEST(Simulation, FullTopKMatchesUncompressed) {
  SimulationConfig tk = small_config(Strategy::topk_prune);
  tk.round.topk_ratio = 1.0;
  const Captured a = capture(tk, 5);
  const Captured b = capture(small_config(Strategy::uncompressed), 5);
  EXPECT_EQ(a.model, b.model);
}

TEST(Simulation, SingleCodebookWithoutResidualIsSpq) {
  SimulationConfig f = small_config();
  f.round.m = 1;
  f.round.residual_ratio = 0.0;
  SimulationConfig s = small_config(Strategy::spq);
  s.round.residual_ratio = 0.0;
  const Captured a = capture(f, 4);
  const Captured b = capture(s, 4);
  EXPECT_EQ(a.packets, b.packets);
  EXPECT_EQ(a.model, b.model);
}

TEST(Simulation, SingleParticipant) {
  SimulationConfig c = small_config();
  c.round.clients_per_round = 1;
  const Captured a = capture(c, 3);
  for (const auto& m : a.metrics) EXPECT_EQ(m.participants, 1u);
}

TEST(Simulation, LedgerCountsSerializedBytes) {
  const SimulationConfig cfg = small_config();
  Simulation sim(cfg);
  std::map<int, std::size_t> sink_bytes;
  sim.set_packet_sink([&](int r, std::uint32_t, const Bytes& b) { sink_bytes[r] += b.size(); });
  std::size_t cum_up = 0, cum_down = 0;
  for (int r = 0; r < 4; ++r) {
    std::size_t down = serialize_model(sim.model()).size();
    for (const auto& set : sim.codebooks()) down += serialize_codebook_set(set).size();
    down *= cfg.round.clients_per_round;
    const RoundMetrics m = sim.run_round();
    EXPECT_EQ(m.uplink_bytes, sink_bytes[r]);
    EXPECT_EQ(m.downlink_bytes, down);
    cum_up += m.uplink_bytes;
    cum_down += m.downlink_bytes;
    EXPECT_EQ(m.cum_uplink, cum_up);
    EXPECT_EQ(m.cum_downlink, cum_down);
    EXPECT_DOUBLE_EQ(m.weighted_total, static_cast<double>(cum_down) / 8.0 + static_cast<double>(cum_up));
  }
  EXPECT_EQ(sim.ledger().total_uplink(), cum_up);
}

TEST(Simulation, UplinkMatchesWireFormula) {
  const SimulationConfig cfg = small_config();
  Simulation sim(cfg);
  std::size_t per_client = kPacketHeaderBytes;
  for (std::size_t len : sim.model().layer_sizes()) {
    per_client += pq_layer_wire_size(len, cfg.round.k, cfg.round.d, residual_budget(len, cfg.round.residual_ratio));
  }
  const RoundMetrics m = sim.run_round();
  EXPECT_EQ(m.uplink_bytes, per_client * cfg.round.clients_per_round);
  std::size_t dense = kPacketHeaderBytes;
  for (std::size_t len : sim.model().layer_sizes()) dense += dense_layer_wire_size(len);
  EXPECT_LT(per_client, dense);
}

TEST(Simulation, SixteenBitScalarQuantIsNearlyLossless) {
  SimulationConfig c = small_config(Strategy::scalar_quant);
  c.round.sq_bits = 16;
  const Captured a = capture(c, 3);
  for (const auto& m : a.metrics) EXPECT_LT(m.tau_max, 1e-3);
  const Captured b = capture(small_config(Strategy::uncompressed), 3);
  EXPECT_LE(max_rel_diff(a.model, b.model), 1e-3);
}

TEST(Simulation, PqDiagnosticsAreConsistent) {
  const Captured a = capture(small_config(), 5);
  for (const auto& m : a.metrics) {
    ASSERT_EQ(m.selection.size(), 4u);
    for (const auto& layer : m.selection) {
      ASSERT_EQ(layer.size(), 2u);
      EXPECT_EQ(layer[0] + layer[1], m.participants);
    }
    EXPECT_LE(m.tau_max, 1.0 + 1e-12);
    EXPECT_LE(m.tau_mean, m.tau_max);
    EXPECT_GE(m.quant_error, 0.0);
  }
}

TEST(Simulation, WithoutPublicDataLearnsCodebooksFromClients) {
  SimulationConfig c = small_config();
  c.round.use_public_data = false;
  Simulation sim(c);
  for (const auto& set : sim.codebooks()) {
    for (const auto& cb : set.codebooks) EXPECT_EQ(cb.data(), std::vector<float>(cb.data().size(), 0.0f));
  }
  sim.run_round();
  bool any_nonzero = false;
  for (const auto& set : sim.codebooks()) {
    for (const auto& cb : set.codebooks) {
      for (float v : cb.data()) any_nonzero |= v != 0.0f;
    }
  }
  EXPECT_TRUE(any_nonzero);
}

TEST(Simulation, IidFedAvgTracksCentralizedTraining) {
  // Equal SGD steps: with every client sampled each round, R rounds match R
  // epochs over the pooled data.
  SimulationConfig c = small_config(Strategy::uncompressed);
  c.federation.alpha = 1e4;
  c.round.clients_per_round = c.federation.n_clients;
  c.train.lr_server = 1.0;
  c.train.lr_local = 0.1;
  const int rounds = 30;
  const ExperimentResult fed = run_experiment(c, {static_cast<std::size_t>(rounds), false});

  Simulation probe(c);
  Dataset pooled;
  pooled.dim = c.federation.dim;
  for (const auto& client : probe.federation().clients) {
    for (std::size_t i = 0; i < client.size(); ++i) pooled.push(client.row(i), client.y[i]);
  }
  ModelState central = probe.model();
  for (int e = 0; e < rounds; ++e) {
    central = apply_server_update(central, local_train(central, pooled, c.train, static_cast<std::uint64_t>(e)), 1.0);
  }
  const double central_acc = evaluate(central, probe.federation().test_set).accuracy;
  EXPECT_GE(fed.series.back().accuracy, 0.9 * central_acc) << "centralized " << central_acc;
}

TEST(Simulation, RejectsInvalidConfig) {
  SimulationConfig c = small_config();
  c.round.k = 7;
  EXPECT_THROW(Simulation{c}, ConfigError);
  c = small_config(Strategy::spq);
  c.round.use_public_data = false;
  EXPECT_THROW(Simulation{c}, ConfigError);
  c = small_config();
  c.round.clients_per_round = 21;
  EXPECT_THROW(Simulation{c}, ConfigError);
  c = small_config();
  c.model.input_dim = 11;
  EXPECT_THROW(Simulation{c}, ConfigError);
}

TEST(Simulation, ClientSamplingIsSortedAndDistinct) {
  Simulation sim(small_config());
  for (int r = 0; r < 10; ++r) {
    const auto ids = sim.sample_clients(r);
    ASSERT_EQ(ids.size(), 5u);
    for (std::size_t i = 1; i < ids.size(); ++i) EXPECT_LT(ids[i - 1], ids[i]);
    EXPECT_LT(ids.back(), 20u);
  }
}

TEST(Summary, RoundsToTargetAndCost) {
  std::vector<RoundMetrics> series(4);
  const double acc[] = {0.2, 0.5, 0.8, 0.7};
  for (int i = 0; i < 4; ++i) {
    series[static_cast<std::size_t>(i)].round = i + 1;
    series[static_cast<std::size_t>(i)].accuracy = acc[i];
    series[static_cast<std::size_t>(i)].weighted_total = 10.0 * (i + 1);
  }
  RoundConfig rc;
  rc.target_accuracy = 0.75;
  const ExperimentSummary s = summarize(series, rc);
  EXPECT_EQ(s.rounds_to_target, 3);
  EXPECT_EQ(s.cost_at_target, 30.0);
  EXPECT_EQ(s.peak_accuracy, 0.8);
  EXPECT_EQ(s.final_accuracy, 0.7);
  rc.target_accuracy = 0.9;
  EXPECT_FALSE(summarize(series, rc).rounds_to_target.has_value());
}

TEST(Summary, SeedAggregateIsInfiniteWhenAnySeedMisses) {
  ExperimentSummary a, b;
  a.rounds_to_target = 10;
  b.rounds_to_target = 20;
  SeedAggregate g = aggregate_seeds({a, b});
  EXPECT_EQ(g.mean_rounds, 15.0);
  EXPECT_EQ(g.std_rounds, 5.0);
  b.rounds_to_target.reset();
  g = aggregate_seeds({a, b});
  EXPECT_TRUE(std::isinf(g.mean_rounds));
  EXPECT_EQ(g.reached, 1u);
}

TEST(CommLedger, WeightsDownlinkAtOneEighth) {
  CommLedger l;
  l.record(100, 800);
  l.record(50, 80);
  EXPECT_EQ(l.total_uplink(), 150u);
  EXPECT_EQ(l.total_downlink(), 880u);
  EXPECT_EQ(l.weighted_total(), 260.0);
  EXPECT_EQ(l.rounds().size(), 2u);
}

}  // namespace
}  // namespace fedmpq
