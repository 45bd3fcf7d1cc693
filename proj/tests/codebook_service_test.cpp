// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "fedmpq/codebook_service.hpp"
#include "golden.hpp"

namespace fedmpq {
namespace {

PseudoCentroidSet pseudo_set(std::vector<float> centroids, std::vector<std::uint32_t> usage,
                             std::size_t dim) {
  PseudoCentroidSet p;
  p.dim = dim;
  p.centroids = std::move(centroids);
  p.usage = std::move(usage);
  return p;
}

std::vector<PseudoCentroidSet> random_pool(std::mt19937_64& rng, std::size_t clients,
                                           std::size_t rows, std::size_t dim) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<PseudoCentroidSet> out;
  for (std::size_t c = 0; c < clients; ++c) {
    std::vector<float> v(rows * dim);
    for (auto& x : v) x = n(rng);
    std::vector<std::uint32_t> u(rows);
    for (auto& x : u) x = 1 + static_cast<std::uint32_t>(rng() % 9);
    out.push_back(pseudo_set(std::move(v), std::move(u), dim));
  }
  return out;
}

Vector random_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<float> d(0.0f, 1.0f);
  Vector v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

void expect_valid(const CodebookSet& set, std::size_t m, std::size_t k, std::size_t d) {
  ASSERT_EQ(set.count(), m);
  for (std::size_t i = 0; i < m; ++i) {
    EXPECT_EQ(set.codebooks[i].size(), k);
    EXPECT_EQ(set.codebooks[i].dim(), d);
    EXPECT_EQ(set.codebooks[i].index(), static_cast<int>(i));
    EXPECT_EQ(set.codebooks[i].layer_id(), set.layer_id);
    EXPECT_TRUE(set.codebooks[i].has_zero_codeword());
  }
}

TEST(EnforceZeroCodeword, ReplacesSmallestNorm) {
  const Codebook cb = enforce_zero_codeword(Codebook(2, 2, {0.1f, 0.1f, 5, 5}));
  EXPECT_EQ(cb.data(), (std::vector<float>{0, 0, 5, 5}));
}

TEST(EnforceZeroCodeword, IdentityWhenZeroPresent) {
  const Codebook cb(4, 1, {3, 0, -1, 2});
  EXPECT_EQ(enforce_zero_codeword(cb), cb);
}

TEST(EnforceZeroCodeword, EqualNormsReplaceLowestIndex) {
  const Codebook cb = enforce_zero_codeword(Codebook(2, 2, {3, 4, -4, 3}));
  EXPECT_EQ(cb.data(), (std::vector<float>{0, 0, -4, 3}));
}

TEST(GenerateCodebooks, PublicPlusPseudoSlots) {
  std::mt19937_64 rng(1);
  const Vector pub = random_vector(rng, 200);
  const auto pool = random_pool(rng, 10, 8, 2);
  CodebookServiceConfig cfg{2, 8, 2, 25, 1e-6, true, 0, 5};
  const CodebookSet set = generate_layer_codebooks(0, 3, {&pub, pool, nullptr}, cfg);
  expect_valid(set, 2, 8, 2);
  EXPECT_EQ(set.round, 3);

  // Slot 0 depends only on the public update; slot 1 only on the pool.
  const auto other_pool = random_pool(rng, 10, 8, 2);
  const CodebookSet swapped_pool = generate_layer_codebooks(0, 3, {&pub, other_pool, nullptr}, cfg);
  EXPECT_EQ(swapped_pool.codebooks[0], set.codebooks[0]);
  EXPECT_NE(swapped_pool.codebooks[1], set.codebooks[1]);
  const Vector other_pub = random_vector(rng, 200);
  const CodebookSet swapped_pub = generate_layer_codebooks(0, 3, {&other_pub, pool, nullptr}, cfg);
  EXPECT_NE(swapped_pub.codebooks[0], set.codebooks[0]);
  EXPECT_EQ(swapped_pub.codebooks[1], set.codebooks[1]);
}

TEST(GenerateCodebooks, SingleSlotIgnoresPseudoCentroids) {
  std::mt19937_64 rng(2);
  const Vector pub = random_vector(rng, 100);
  const auto pool = random_pool(rng, 4, 4, 2);
  CodebookServiceConfig cfg{1, 8, 2, 25, 1e-6, true, 0, 5};
  const CodebookSet a = generate_layer_codebooks(0, 1, {&pub, pool, nullptr}, cfg);
  const CodebookSet b = generate_layer_codebooks(0, 1, {&pub, {}, nullptr}, cfg);
  expect_valid(a, 1, 8, 2);
  EXPECT_EQ(a, b);
}

TEST(GenerateCodebooks, WithoutPublicDataEverySlotFromPool) {
  std::mt19937_64 rng(3);
  const auto pool = random_pool(rng, 16, 8, 2);
  CodebookServiceConfig cfg{8, 8, 2, 25, 1e-6, true, 0, 5};
  const CodebookSet set = generate_layer_codebooks(0, 2, {nullptr, pool, nullptr}, cfg);
  expect_valid(set, 8, 8, 2);
  for (const auto& cb : set.codebooks) {
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < cb.size(); ++i) {
      auto c = cb.codeword(i);
      if (c[0] != 0.0f || c[1] != 0.0f) ++nonzero;
    }
    EXPECT_EQ(nonzero, 7u);
  }
}

TEST(GenerateCodebooks, BootstrapWithoutAnyInputIsZeros) {
  CodebookServiceConfig cfg{3, 4, 2, 25, 1e-6, true, 0, 5};
  const CodebookSet set = generate_layer_codebooks(1, 0, {}, cfg);
  expect_valid(set, 3, 4, 2);
  for (const auto& cb : set.codebooks) {
    EXPECT_EQ(cb.data(), std::vector<float>(8, 0.0f));
  }
}

TEST(GenerateCodebooks, BootstrapFromPublicUsesDistinctSeeds) {
  std::mt19937_64 rng(4);
  const Vector pub = random_vector(rng, 400);
  CodebookServiceConfig cfg{4, 16, 2, 25, 1e-6, true, 0, 5};
  const CodebookSet set = generate_layer_codebooks(0, 0, {&pub, {}, nullptr}, cfg);
  expect_valid(set, 4, 16, 2);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = a + 1; b < 4; ++b) EXPECT_NE(set.codebooks[a].data(), set.codebooks[b].data());
  }
}

TEST(GenerateCodebooks, EmptyPartsCarryPreviousCodebooks) {
  CodebookServiceConfig cfg{3, 2, 1, 25, 1e-6, true, 0, 5};
  CodebookSet previous;
  for (int i = 0; i < 3; ++i) {
    previous.codebooks.emplace_back(2, 1, std::vector<float>{0, 10.0f + static_cast<float>(i)}, 0, i);
  }
  // Two rows across three parts: the first two parts are empty.
  const std::vector<PseudoCentroidSet> pool{pseudo_set({4, 6}, {1, 1}, 1)};
  const CodebookSet set = generate_layer_codebooks(0, 7, {nullptr, pool, &previous}, cfg);
  expect_valid(set, 3, 2, 1);
  EXPECT_EQ(set.codebooks[0], previous.codebooks[0]);
  EXPECT_EQ(set.codebooks[1], previous.codebooks[1]);
  EXPECT_NE(set.codebooks[2], previous.codebooks[2]);
}

TEST(GenerateCodebooks, PartsAreDisjoint) {
  // Two parts of four distinct points with K=4: each codebook reproduces its
  // part except the smallest-norm point, which becomes zero.
  std::vector<float> pts;
  for (int i = 1; i <= 8; ++i) pts.insert(pts.end(), {static_cast<float>(i), static_cast<float>(-i)});
  const std::vector<PseudoCentroidSet> pool{pseudo_set({pts.begin(), pts.begin() + 8}, {1, 1, 1, 1}, 2),
                                            pseudo_set({pts.begin() + 8, pts.end()}, {1, 1, 1, 1}, 2)};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CodebookServiceConfig cfg{2, 4, 2, 25, 1e-6, true, 0, seed};
    const CodebookSet set = generate_layer_codebooks(0, 1, {nullptr, pool, nullptr}, cfg);
    std::set<float> seen;
    for (const auto& cb : set.codebooks) {
      for (std::size_t i = 0; i < 4; ++i) {
        auto c = cb.codeword(i);
        if (c[0] == 0.0f) continue;
        EXPECT_EQ(c[1], -c[0]);
        EXPECT_TRUE(seen.insert(c[0]).second) << "point used twice";
      }
    }
    EXPECT_EQ(seen.size(), 6u);
    EXPECT_EQ(seen.count(1.0f), 0u);  // the global smallest is always dropped
  }
}

TEST(GenerateCodebooks, Deterministic) {
  std::mt19937_64 rng(6);
  const Vector pub = random_vector(rng, 300);
  const auto pool = random_pool(rng, 20, 16, 2);
  CodebookServiceConfig cfg{4, 32, 2, 25, 1e-6, true, 0, 11};
  const CodebookSet a = generate_layer_codebooks(2, 5, {&pub, pool, nullptr}, cfg);
  const CodebookSet b = generate_layer_codebooks(2, 5, {&pub, pool, nullptr}, cfg);
  EXPECT_EQ(serialize_codebook_set(a), serialize_codebook_set(b));
  cfg.seed = 12;
  EXPECT_NE(serialize_codebook_set(generate_layer_codebooks(2, 5, {&pub, pool, nullptr}, cfg)),
            serialize_codebook_set(a));
}

TEST(GenerateCodebooks, RandomInputsAlwaysHoldZeroCodeword) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 30; ++t) {
    const std::size_t m = 1 + rng() % 5;
    const std::size_t k = std::size_t{1} << (1 + rng() % 5);
    const std::size_t d = 1 + rng() % 4;
    const Vector pub = random_vector(rng, 10 + rng() % 200);
    const auto pool = random_pool(rng, rng() % 6, k / 2, d);
    CodebookServiceConfig cfg{m, k, d, 25, 1e-6, (t % 2) == 0, t % 3 == 0 ? 4u : 0u, rng()};
    const bool use_pub = (t % 4) != 0;
    const CodebookSet set =
        generate_layer_codebooks(0, t, {use_pub ? &pub : nullptr, pool, nullptr}, cfg);
    expect_valid(set, m, k, d);
  }
}

TEST(GenerateCodebooks, FewPseudoCentroidsWarn) {
  const std::vector<PseudoCentroidSet> pool{pseudo_set({1, 1, 2, 2}, {3, 1}, 2)};
  CodebookServiceConfig cfg{1, 8, 2, 25, 1e-6, true, 0, 1};
  std::vector<std::string> warnings;
  generate_layer_codebooks(0, 1, {nullptr, pool, nullptr}, cfg, &warnings);
  EXPECT_FALSE(warnings.empty());
}

TEST(GenerateCodebooks, RejectsBadShapes) {
  CodebookServiceConfig cfg{2, 6, 2, 25, 1e-6, true, 0, 1};
  EXPECT_THROW(generate_layer_codebooks(0, 0, {}, cfg), ConfigError);
  cfg.k = 8;
  const std::vector<PseudoCentroidSet> pool{pseudo_set({1, 2, 3}, {1}, 3)};
  EXPECT_THROW(generate_layer_codebooks(0, 0, {nullptr, pool, nullptr}, cfg), ShapeError);
}

TEST(CodebookSetWire, RoundTripAndSize) {
  std::mt19937_64 rng(8);
  const Vector pub = random_vector(rng, 64);
  const CodebookSet set =
      generate_layer_codebooks(3, 9, {&pub, {}, nullptr}, CodebookServiceConfig{2, 4, 3, 25, 1e-6, true, 0, 2});
  const Bytes b = serialize_codebook_set(set);
  EXPECT_EQ(b.size(), codebook_set_wire_size(2, 4, 3));
  EXPECT_EQ(deserialize_codebook_set(b), set);
  Bytes cut(b.begin(), b.end() - 1);
  EXPECT_THROW(deserialize_codebook_set(cut), CorruptData);
}

TEST(CodebookSetWire, MatchesGolden) {
  CodebookSet set;
  set.layer_id = 1;
  set.round = 2;
  set.codebooks.emplace_back(2, 2, std::vector<float>{0, 0, 1.5f, -2}, 1, 0);
  set.codebooks.emplace_back(2, 2, std::vector<float>{0, 0, 0.25f, 8}, 1, 1);
  EXPECT_EQ(test::to_hex(serialize_codebook_set(set)), test::read_golden("codebook_set.hex"));
}

TEST(PublicGradient, MatchesClientUpdateOnSameData) {
  FederationConfig fc;
  fc.n_clients = 3;
  fc.test_size = 10;
  const FederationData fed = gen_synthetic_federation(fc);
  const ModelState model = init_model({ModelKind::mlp, fc.dim, 8, fc.classes}, 3);
  const TrainConfig tc;
  EXPECT_EQ(simulate_public_gradient(model, fed.clients[1], tc, 99), local_train(model, fed.clients[1], tc, 99));
  EXPECT_THROW(simulate_public_gradient(model, Dataset{fc.dim, {}, {}}, tc, 1), std::invalid_argument);
}

TEST(PublicGradient, ZeroAtStationaryPoint) {
  // Identical inputs with balanced labels: the zero model has zero gradient.
  Dataset ds;
  ds.dim = 2;
  ds.push(std::vector<float>{1.0f, -2.0f}, 0);
  ds.push(std::vector<float>{1.0f, -2.0f}, 1);
  ModelState model = init_model({ModelKind::logreg, 2, 0, 2}, 1);
  for (auto& l : model.layers) std::fill(l.values.begin(), l.values.end(), 0.0f);
  const Update g = simulate_public_gradient(model, ds, TrainConfig{0.5, 0.1, 1, 8}, 4);
  for (const auto& layer : g) {
    for (float v : layer) EXPECT_EQ(v, 0.0f);
  }
}

TEST(PublicGradient, MatchesClosedFormSoftmaxStep) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t d = 4, c = 3, samples = 6;
  Dataset ds;
  ds.dim = d;
  for (std::size_t s = 0; s < samples; ++s) {
    std::vector<float> x(d);
    for (auto& v : x) v = static_cast<float>(n(rng));
    ds.push(x, static_cast<std::uint32_t>(s % c));
  }
  const ModelState model = init_model({ModelKind::logreg, d, 0, c}, 5);
  const double lr = 0.3;
  // One full batch: z = -lr * (1/n) sum_i (softmax(W x_i + b) - e_{y_i}) [x_i; 1].
  std::vector<double> gw(c * d, 0.0), gb(c, 0.0);
  for (std::size_t s = 0; s < samples; ++s) {
    std::vector<double> logit(c);
    double mx = -1e300;
    for (std::size_t k = 0; k < c; ++k) {
      double a = model.layers[1].values[k];
      for (std::size_t j = 0; j < d; ++j) a += static_cast<double>(model.layers[0].values[k * d + j]) * ds.row(s)[j];
      logit[k] = a;
      mx = std::max(mx, a);
    }
    double z = 0.0;
    for (double v : logit) z += std::exp(v - mx);
    for (std::size_t k = 0; k < c; ++k) {
      const double p = std::exp(logit[k] - mx) / z - (ds.y[s] == k ? 1.0 : 0.0);
      for (std::size_t j = 0; j < d; ++j) gw[k * d + j] += p * ds.row(s)[j] / static_cast<double>(samples);
      gb[k] += p / static_cast<double>(samples);
    }
  }
  const Update g = simulate_public_gradient(model, ds, TrainConfig{lr, 0.1, 1, samples}, 3);
  for (std::size_t i = 0; i < c * d; ++i) EXPECT_NEAR(g[0][i], -lr * gw[i], 1e-6);
  for (std::size_t k = 0; k < c; ++k) EXPECT_NEAR(g[1][k], -lr * gb[k], 1e-6);
}

}  // namespace
}  // namespace fedmpq
