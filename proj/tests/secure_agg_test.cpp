// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <type_traits>

#include "fedmpq/secure_agg.hpp"
#include "fedmpq/verify.hpp"

namespace fedmpq {
namespace {

// The session must not expose submissions, by any plausible accessor name.
template <class T>
concept LeaksSubmissions = requires(T& t) { t.packets(); } || requires(T& t) { t.packet(0u); } ||
                           requires(T& t) { t.submissions(); } || requires(T& t) { t.client(0u); } ||
                           requires(T& t) { t.aggregate(); } || requires(T& t) { t.counts(); };
static_assert(!LeaksSubmissions<SecureAggregator>);
static_assert(!std::is_copy_constructible_v<SecureAggregator>);
template <class T>
concept SealsLvalue = requires(T& t) { t.seal(); };
static_assert(!SealsLvalue<SecureAggregator>, "seal must consume the session");

PqLayerUpdate layer_update(int codebook, std::vector<std::uint32_t> codes, std::size_t length,
                           std::size_t k, std::size_t d, SparseResidual residual = {}) {
  PqLayerUpdate u;
  u.code.codebook_index = codebook;
  u.code.codes = std::move(codes);
  u.code.length = length;
  u.code.pad_count = num_subvectors(length, d) * d - length;
  residual.length = length;
  u.residual = std::move(residual);
  u.pseudo.source_codebook_index = codebook;
  u.pseudo.dim = d;
  u.pseudo.centroids.assign(k / 2 * d, 0.5f);
  u.pseudo.usage.assign(k / 2, 1);
  return u;
}

CodebookSet one_set(std::vector<Codebook> cbs) {
  CodebookSet s;
  s.codebooks = std::move(cbs);
  return s;
}

TEST(SecureAggregator, OneHotCountsAndMean) {
  SecureAggregator s({LayerSchema{4, 1, 2, 2}});
  s.submit(ClientUpdatePacket{10, {layer_update(0, {1, 0}, 4, 2, 2)}});
  EXPECT_EQ(s.submit(ClientUpdatePacket{11, {layer_update(0, {1, 1}, 4, 2, 2)}}), 2u);
  const CompressedAggregate agg = std::move(s).seal();
  ASSERT_EQ(agg.participants, 2u);
  const auto& o = agg.layers[0].counts[0];
  EXPECT_EQ(o, (std::vector<std::uint32_t>{0, 2, 1, 1}));  // [[0,2],[1,1]]
  const auto g = finalize(agg, {one_set({Codebook(2, 2, {0, 0, 1, 1})})});
  EXPECT_EQ(g[0], (Vector{1, 1, 0.5f, 0.5f}));
}

TEST(SecureAggregator, ZeroRatioLeavesResidualSumZero) {
  SecureAggregator s({LayerSchema{5, 1, 4, 2}});
  s.submit(ClientUpdatePacket{1, {layer_update(0, {3, 2, 1}, 5, 4, 2)}});
  const CompressedAggregate agg = std::move(s).seal();
  EXPECT_EQ(agg.layers[0].residual_sum, std::vector<double>(5, 0.0));
}

TEST(SecureAggregator, DifferentCodebooksPartitionRows) {
  SecureAggregator s({LayerSchema{6, 2, 4, 2}});
  s.submit(ClientUpdatePacket{1, {layer_update(0, {1, 2, 3}, 6, 4, 2)}});
  s.submit(ClientUpdatePacket{2, {layer_update(1, {0, 0, 2}, 6, 4, 2)}});
  const CompressedAggregate agg = std::move(s).seal();
  const LayerAggregate& a = agg.layers[0];
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t row = 0; row < a.rows; ++row) {
      std::uint32_t sum = 0;
      for (std::size_t c = 0; c < a.k; ++c) sum += a.count(n, row, c);
      EXPECT_EQ(sum, 1u);
    }
  }
}

TEST(SecureAggregator, SingleClientIdentity) {
  const Codebook cb(4, 2, {0, 0, 1, -1, 0.5f, 2, -3, 0.25f});
  SparseResidual r;
  r.entries = {{0, 0.125f}, {4, -1.5f}};
  const PqLayerUpdate u = layer_update(0, {2, 3, 1}, 5, 4, 2, r);
  SecureAggregator s({LayerSchema{5, 1, 4, 2}});
  s.submit(ClientUpdatePacket{7, {u}});
  const auto g = finalize(std::move(s), {one_set({cb})});
  Vector want = dequantize(u.code, cb);
  const Vector dense = densify(u.residual);
  for (std::size_t i = 0; i < want.size(); ++i) want[i] += dense[i];
  EXPECT_EQ(g[0], want);
}

TEST(SecureAggregator, IdenticalPacketsAverageToOne) {
  const Codebook cb(4, 2, {0, 0, 1, -1, 0.5f, 2, -3, 0.25f});
  const PqLayerUpdate u = layer_update(0, {2, 3, 1}, 6, 4, 2);
  SecureAggregator s({LayerSchema{6, 1, 4, 2}});
  for (std::uint32_t id = 0; id < 5; ++id) s.submit(ClientUpdatePacket{id, {u}});
  EXPECT_EQ(finalize(std::move(s), {one_set({cb})})[0], dequantize(u.code, cb));
}

TEST(SecureAggregator, EmptySessionFails) {
  SecureAggregator s({LayerSchema{4, 1, 2, 2}});
  try {
    (void)std::move(s).seal();
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty aggregation");
  }
}

TEST(SecureAggregator, RejectionsLeaveSessionUnchanged) {
  SecureAggregator s({LayerSchema{4, 1, 2, 2}});
  s.submit(ClientUpdatePacket{1, {layer_update(0, {1, 0}, 4, 2, 2)}});
  EXPECT_THROW(s.submit(ClientUpdatePacket{1, {layer_update(0, {1, 1}, 4, 2, 2)}}), RejectedPacket);
  EXPECT_THROW(s.submit(ClientUpdatePacket{2, {layer_update(0, {1, 1, 1}, 6, 2, 2)}}), RejectedPacket);
  EXPECT_THROW(s.submit(DensePacket{3, {Vector(4, 1.0f)}}), RejectedPacket);
  Bytes garbage{1, 2, 3};
  EXPECT_THROW(s.submit(garbage), RejectedPacket);
  EXPECT_EQ(s.participants(), 1u);
  const auto g = finalize(std::move(s), {one_set({Codebook(2, 2, {0, 0, 1, 1})})});
  EXPECT_EQ(g[0], (Vector{1, 1, 0, 0}));
}

TEST(SecureAggregator, PseudoCentroidsPooledPerLayer) {
  SecureAggregator s({LayerSchema{4, 1, 2, 2}, LayerSchema{3, 1, 2, 2}});
  s.submit(ClientUpdatePacket{1, {layer_update(0, {1, 0}, 4, 2, 2), layer_update(0, {1, 0}, 3, 2, 2)}});
  s.submit(ClientUpdatePacket{2, {layer_update(0, {0, 0}, 4, 2, 2), layer_update(0, {0, 1}, 3, 2, 2)}});
  const auto pool = s.take_pseudo_centroids();
  ASSERT_EQ(pool.size(), 2u);
  EXPECT_EQ(pool[0].size(), 2u);
  EXPECT_EQ(pool[1].size(), 2u);
  EXPECT_TRUE(s.take_pseudo_centroids().empty());
}

TEST(SecureAggregator, OrderIndependentAndConserving) {
  std::mt19937_64 rng(3);
  const std::size_t length = 37, k = 8, d = 3, m = 3;
  const PacketSchema schema{LayerSchema{length, m, k, d}};
  std::vector<Codebook> cbs;
  std::normal_distribution<float> nd(0.0f, 1.0f);
  for (std::size_t n = 0; n < m; ++n) {
    std::vector<float> data(k * d);
    for (auto& v : data) v = nd(rng);
    cbs.emplace_back(k, d, std::move(data), 0, static_cast<int>(n));
  }
  std::vector<ClientUpdatePacket> packets;
  for (std::uint32_t id = 0; id < 12; ++id) {
    Vector z(length);
    for (auto& v : z) v = nd(rng);
    const EncodedLayer e = encode_layer(z, cbs, 0.1, 0.99);
    packets.push_back({id, {e.update}});
  }
  auto run = [&](const std::vector<ClientUpdatePacket>& order) {
    SecureAggregator s(schema);
    for (const auto& p : order) s.submit(p);
    return std::move(s).seal();
  };
  const CompressedAggregate a = run(packets);
  std::uint64_t mass = 0;
  for (const auto& o : a.layers[0].counts) {
    for (auto c : o) mass += c;
  }
  EXPECT_EQ(mass, packets.size() * num_subvectors(length, d));

  const auto ga = finalize(a, {one_set(cbs)});
  for (int t = 0; t < 5; ++t) {
    auto shuffled = packets;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const CompressedAggregate b = run(shuffled);
    EXPECT_EQ(b.layers[0].counts, a.layers[0].counts);
    const auto gb = finalize(b, {one_set(cbs)});
    for (std::size_t i = 0; i < length; ++i) EXPECT_NEAR(gb[0][i], ga[0][i], 1e-5 * (1 + std::fabs(ga[0][i])));
  }
}

TEST(SecureAggregator, BaselinePacketsAverageDensely) {
  SecureAggregator s({LayerSchema{3}});
  s.submit(DensePacket{1, {Vector{1, 2, 3}}});
  s.submit(DensePacket{2, {Vector{3, 2, 1}}});
  EXPECT_EQ(finalize(std::move(s), {})[0], (Vector{2, 2, 2}));

  SecureAggregator t({LayerSchema{4}});
  SparseResidual r;
  r.length = 4;
  r.entries = {{1, 4.0f}};
  t.submit(SparsePacket{1, {r}});
  r.entries = {{1, 2.0f}, {3, 2.0f}};
  t.submit(SparsePacket{2, {r}});
  EXPECT_EQ(finalize(std::move(t), {})[0], (Vector{0, 3, 0, 1}));
}

TEST(SecureAggregator, ExchangeIdentityOracle) {
  const verify::SuiteResult r = verify::exchange_identity(100, 17);
  EXPECT_TRUE(r.passed()) << r.first_failure;
  EXPECT_LE(r.worst, 1e-5);
}

TEST(SecureAggregator, OneHotOracleBitExact) {
  const verify::SuiteResult r = verify::onehot_oracle(100, 19);
  EXPECT_TRUE(r.passed()) << r.first_failure;
}

}  // namespace
}  // namespace fedmpq
