// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/**
 * Compressed-domain aggregation behind a trust boundary.
 *
 * SecureAggregator stands in for the enclave or trusted third party: it takes
 * serialized client packets, folds each one into running one-hot code counts
 * (one count matrix per codebook) and a dense residual sum, and drops the
 * packet. The only things that leave the session are the sealed
 * CompressedAggregate and the pooled, unattributed pseudo-centroids. There is
 * deliberately no accessor for any individual submission.
 *
 * Reconstruction happens outside the boundary:
 *   g = ( sum_n O[n] * C^n  +  R ) / N
 * where O[n] is the rows x K count matrix for codebook n and C^n its K x D
 * codeword matrix. This equals the mean of the per-client reconstructions.
 *
 * No attestation or cryptography is modelled; the boundary is the class API.
 */

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "fedmpq/codebook_service.hpp"
#include "fedmpq/error.hpp"
#include "fedmpq/packet.hpp"

namespace fedmpq {

struct LayerAggregate {
  std::size_t length = 0;  // L
  std::size_t rows = 0;    // ceil(L/D)
  std::size_t m = 0;
  std::size_t k = 0;
  std::vector<std::vector<std::uint32_t>> counts;  // m matrices, rows x k row-major
  std::vector<double> residual_sum;                // length L

  [[nodiscard]] std::uint32_t count(std::size_t n, std::size_t row, std::size_t code) const {
    return counts[n][row * k + code];
  }
};

struct CompressedAggregate {
  PacketKind kind = PacketKind::pq;
  std::vector<LayerAggregate> layers;
  std::size_t participants = 0;  // N
};

class RejectedPacket : public Error {
 public:
  using Error::Error;
};

class SecureAggregator {
 public:
  explicit SecureAggregator(PacketSchema schema) : schema_(std::move(schema)) {
    for (const auto& s : schema_) {
      if (s.length == 0) throw ConfigError("aggregator: empty layer in schema");
      LayerAggregate a;
      a.length = s.length;
      a.rows = num_subvectors(s.length, s.d);
      a.m = s.m;
      a.k = s.k;
      a.residual_sum.assign(s.length, 0.0);
      agg_.layers.push_back(std::move(a));
    }
  }

  SecureAggregator(const SecureAggregator&) = delete;
  SecureAggregator& operator=(const SecureAggregator&) = delete;
  SecureAggregator(SecureAggregator&&) noexcept = default;
  SecureAggregator& operator=(SecureAggregator&&) noexcept = default;

  /// Decodes and accumulates one serialized packet. Returns the participant
  /// count after acceptance. Malformed packets, packets whose kind differs
  /// from earlier ones, and repeat client ids throw RejectedPacket and leave
  /// the session unchanged.
  std::size_t submit(std::span<const std::uint8_t> bytes) {
    std::optional<UplinkPacket> packet;
    try {
      packet = deserialize_packet(bytes, schema_);
    } catch (const CorruptData& e) {
      throw RejectedPacket(std::string("packet rejected: ") + e.what());
    }
    return accept(*packet);
  }

  std::size_t submit(const UplinkPacket& packet) {
    // Round-trip through the wire format so in-memory and serialized
    // submissions are validated identically.
    Bytes bytes;
    try {
      bytes = serialize_packet(packet, schema_);
    } catch (const Error& e) {
      throw RejectedPacket(std::string("packet rejected: ") + e.what());
    }
    return submit(bytes);
  }

  [[nodiscard]] std::size_t participants() const { return agg_.participants; }
  [[nodiscard]] const PacketSchema& schema() const { return schema_; }

  /// Pseudo-centroids pooled per layer, in submission order, without client
  /// attribution. Empties the pool.
  std::vector<std::vector<PseudoCentroidSet>> take_pseudo_centroids() {
    auto out = std::move(pseudo_);
    pseudo_.clear();
    return out;
  }

  /// Ends the session; only the aggregate leaves the boundary.
  [[nodiscard]] CompressedAggregate seal() && {
    if (agg_.participants == 0) throw Error("empty aggregation");
    return std::move(agg_);
  }

 private:
  std::size_t accept(const UplinkPacket& packet) {
    const std::uint32_t id = packet_client_id(packet);
    if (seen_.contains(id)) throw RejectedPacket("packet rejected: duplicate client id");
    const PacketKind kind = packet_kind(packet);
    if (agg_.participants > 0 && kind != agg_.kind) {
      throw RejectedPacket("packet rejected: mixed packet kinds in one session");
    }
    if (kind == PacketKind::pq && pseudo_.empty()) pseudo_.resize(schema_.size());

    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          for (std::size_t l = 0; l < p.layers.size(); ++l) {
            LayerAggregate& a = agg_.layers[l];
            if constexpr (std::is_same_v<T, ClientUpdatePacket>) {
              const auto& u = p.layers[l];
              auto& counts = a.counts;
              if (counts.empty()) counts.assign(a.m, std::vector<std::uint32_t>(a.rows * a.k, 0));
              auto& o = counts[static_cast<std::size_t>(u.code.codebook_index)];
              for (std::size_t row = 0; row < u.code.codes.size(); ++row) ++o[row * a.k + u.code.codes[row]];
              add_sparse(a, u.residual);
              pseudo_[l].push_back(u.pseudo);
            } else if constexpr (std::is_same_v<T, DensePacket>) {
              for (std::size_t i = 0; i < a.length; ++i) a.residual_sum[i] += p.layers[l][i];
            } else if constexpr (std::is_same_v<T, ScalarQuantPacket>) {
              const Vector v = scalar_dequantize(p.layers[l]);
              for (std::size_t i = 0; i < a.length; ++i) a.residual_sum[i] += v[i];
            } else {
              add_sparse(a, p.layers[l]);
            }
          }
        },
        packet);
    agg_.kind = kind;
    seen_.insert(id);
    return ++agg_.participants;
  }

  static void add_sparse(LayerAggregate& a, const SparseResidual& s) {
    for (const auto& e : s.entries) a.residual_sum[e.position] += e.value;
  }

  PacketSchema schema_;
  CompressedAggregate agg_;
  std::set<std::uint32_t> seen_;
  std::vector<std::vector<PseudoCentroidSet>> pseudo_;
};

/// Mean update from a sealed aggregate. `codebooks` must be the per-layer sets
/// the clients quantized against (ignored for non-pq aggregates).
inline std::vector<Vector> finalize(const CompressedAggregate& agg,
                                    const std::vector<CodebookSet>& codebooks) {
  if (agg.participants == 0) throw Error("empty aggregation");
  const bool pq = agg.kind == PacketKind::pq;
  if (pq && codebooks.size() != agg.layers.size()) {
    throw ShapeError("finalize: one codebook set per layer required");
  }
  const auto n_clients = static_cast<double>(agg.participants);
  std::vector<Vector> g(agg.layers.size());
  for (std::size_t l = 0; l < agg.layers.size(); ++l) {
    const LayerAggregate& a = agg.layers[l];
    std::vector<double> sum = a.residual_sum;
    if (pq) {
      const CodebookSet& set = codebooks[l];
      if (set.count() != a.m || set.codebook_size() != a.k) {
        throw ShapeError("finalize: codebook set does not match the aggregate");
      }
      const std::size_t d = set.dim();
      for (std::size_t n = 0; n < a.m; ++n) {
        if (a.counts.empty()) break;
        const auto& o = a.counts[n];
        const Codebook& cb = set.codebooks[n];
        for (std::size_t row = 0; row < a.rows; ++row) {
          for (std::size_t c = 0; c < a.k; ++c) {
            const std::uint32_t cnt = o[row * a.k + c];
            if (cnt == 0) continue;
            auto w = cb.codeword(c);
            for (std::size_t j = 0; j < d; ++j) {
              const std::size_t pos = row * d + j;
              if (pos < a.length) sum[pos] += static_cast<double>(cnt) * w[j];
            }
          }
        }
      }
    }
    g[l].resize(a.length);
    for (std::size_t i = 0; i < a.length; ++i) g[l][i] = static_cast<float>(sum[i] / n_clients);
  }
  return g;
}

inline std::vector<Vector> finalize(SecureAggregator&& session, const std::vector<CodebookSet>& codebooks) {
  return finalize(std::move(session).seal(), codebooks);
}

}  // namespace fedmpq
