// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

// Four clients compress random updates against two shared codebooks, the
// aggregator folds the packets, and the reconstructed mean is compared with
// the true mean of the uncompressed updates.

#include <cmath>
#include <cstdio>
#include <random>

#include "fedmpq/fedmpq.hpp"

int main() {
  using namespace fedmpq;
  constexpr std::size_t kLen = 1000;
  constexpr std::size_t kClients = 4;
  std::mt19937_64 rng(42);
  std::normal_distribution<float> normal(0.0f, 0.05f);

  // Codebooks from a stand-in for the server's public update.
  Vector public_update(kLen);
  for (auto& v : public_update) v = normal(rng);
  CodebookServiceConfig cs;
  cs.m = 2;
  cs.k = 16;
  cs.d = 2;
  LayerCodebookInput in;
  in.public_update = &public_update;
  const CodebookSet set = generate_layer_codebooks(0, 0, in, cs);

  const PacketSchema schema{{kLen, cs.m, cs.k, cs.d}};
  SecureAggregator agg(schema);
  std::vector<double> truth(kLen, 0.0);
  std::size_t uplink = 0;
  for (std::uint32_t c = 0; c < kClients; ++c) {
    Vector z(kLen);
    for (auto& v : z) v = normal(rng);
    for (std::size_t i = 0; i < kLen; ++i) truth[i] += z[i] / kClients;
    const EncodedLayer e = encode_layer(z, set.codebooks, 0.01, 0.99);
    const Bytes bytes = serialize_packet(ClientUpdatePacket{c, {e.update}}, schema);
    uplink += bytes.size();
    agg.submit(bytes);
    std::printf("client %u: codebook %d, tau %.3f, %zu bytes\n", c, e.update.code.codebook_index,
                e.contraction.tau_observed, bytes.size());
  }
  const auto g = finalize(std::move(agg), {set});

  double err = 0.0;
  double norm = 0.0;
  for (std::size_t i = 0; i < kLen; ++i) {
    err += (g[0][i] - truth[i]) * (g[0][i] - truth[i]);
    norm += truth[i] * truth[i];
  }
  std::printf("uplink %zu bytes vs %zu uncompressed; relative error of the mean %.3f\n", uplink,
              kClients * (kPacketHeaderBytes + dense_layer_wire_size(kLen)), std::sqrt(err / norm));
  return 0;
}
