// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/**
 * Uplink packets and their wire format. All integers are little-endian.
 *
 *   packet header     kind u8, client_id u32, layer_count u16          (7 bytes)
 *
 *   pq layer          layer_id u16, codebook u8, L u32, k u32           (11 bytes)
 *                     packed codes: ceil(L/D) fields of log2(K) bits, LSB-first
 *                     k x (position u32, value f32)
 *                     floor(K/2) x D f32 pseudo-centroids, floor(K/2) x u32 usage
 *
 *   dense layer       layer_id u16, L u32, L x f32
 *   scalar layer      layer_id u16, L u32, bits u8, lo f32, hi f32, packed levels
 *   sparse layer      layer_id u16, L u32, k u32, k x (position u32, value f32)
 *
 * Codebook and codeword indices are 0-based on the wire.
 */

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "fedmpq/baselines.hpp"
#include "fedmpq/bytes.hpp"
#include "fedmpq/error.hpp"
#include "fedmpq/pq_codec.hpp"

namespace fedmpq {

enum class PacketKind : std::uint8_t { pq = 1, dense = 2, scalar = 3, sparse = 4 };

struct ClientUpdatePacket {
  std::uint32_t client_id = 0;
  std::vector<PqLayerUpdate> layers;
  friend bool operator==(const ClientUpdatePacket&, const ClientUpdatePacket&) = default;
};

struct DensePacket {
  std::uint32_t client_id = 0;
  std::vector<Vector> layers;
  friend bool operator==(const DensePacket&, const DensePacket&) = default;
};

struct ScalarQuantPacket {
  std::uint32_t client_id = 0;
  std::vector<ScalarQuantLayer> layers;
  friend bool operator==(const ScalarQuantPacket&, const ScalarQuantPacket&) = default;
};

struct SparsePacket {
  std::uint32_t client_id = 0;
  std::vector<SparseResidual> layers;
  friend bool operator==(const SparsePacket&, const SparsePacket&) = default;
};

using UplinkPacket = std::variant<ClientUpdatePacket, DensePacket, ScalarQuantPacket, SparsePacket>;

/// What the receiver must know to decode a layer.
struct LayerSchema {
  std::size_t length = 0;  // L
  std::size_t m = 1;       // codebooks (pq only)
  std::size_t k = 2;       // codewords per codebook (pq only)
  std::size_t d = 1;       // codeword length (pq only)
  friend bool operator==(const LayerSchema&, const LayerSchema&) = default;
};
using PacketSchema = std::vector<LayerSchema>;

inline constexpr std::size_t kPacketHeaderBytes = 7;
inline constexpr std::size_t kPqLayerHeaderBytes = 11;

/// Exact serialized size of one pq layer.
constexpr std::size_t pq_layer_wire_size(std::size_t length, std::size_t k, std::size_t d,
                                         std::size_t residual_entries) {
  return kPqLayerHeaderBytes + packed_size(num_subvectors(length, d), code_bits(k)) +
         8 * residual_entries + (k / 2) * (4 * d + 4);
}

constexpr std::size_t dense_layer_wire_size(std::size_t length) { return 6 + 4 * length; }

inline std::uint32_t packet_client_id(const UplinkPacket& p) {
  return std::visit([](const auto& v) { return v.client_id; }, p);
}

inline PacketKind packet_kind(const UplinkPacket& p) {
  switch (p.index()) {
    case 0: return PacketKind::pq;
    case 1: return PacketKind::dense;
    case 2: return PacketKind::scalar;
    default: return PacketKind::sparse;
  }
}

namespace detail {

inline void write_entries(ByteWriter& w, const SparseResidual& s) {
  for (const auto& e : s.entries) {
    w.u32(e.position);
    w.f32(e.value);
  }
}

inline SparseResidual read_entries(ByteReader& r, std::size_t length, std::size_t count) {
  if (count > length) throw CorruptData("corrupt packet");
  SparseResidual s;
  s.length = length;
  s.entries.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    s.entries[i].position = r.u32();
    s.entries[i].value = r.f32();
    if (s.entries[i].position >= length) throw CorruptData("corrupt packet");
    if (i > 0 && s.entries[i].position <= s.entries[i - 1].position) {
      throw CorruptData("corrupt packet");
    }
  }
  return s;
}

inline void write_pq_layer(ByteWriter& w, std::uint16_t layer_id, const PqLayerUpdate& u,
                           std::size_t k) {
  w.u16(layer_id);
  w.u8(static_cast<std::uint8_t>(u.code.codebook_index));
  w.u32(static_cast<std::uint32_t>(u.code.length));
  w.u32(static_cast<std::uint32_t>(u.residual.entries.size()));
  w.raw(pack_codes(u.code, k));
  write_entries(w, u.residual);
  if (u.pseudo.size() != k / 2) throw ShapeError("pseudo-centroid block must hold K/2 rows");
  for (float v : u.pseudo.centroids) w.f32(v);
  for (std::uint32_t c : u.pseudo.usage) w.u32(c);
}

inline PqLayerUpdate read_pq_layer(ByteReader& r, std::size_t layer, const LayerSchema& s) {
  if (r.u16() != layer) throw CorruptData("corrupt packet");
  PqLayerUpdate u;
  const std::size_t cb = r.u8();
  const std::size_t length = r.u32();
  const std::size_t k = r.u32();
  if (cb >= s.m || length != s.length) throw CorruptData("corrupt packet");
  const std::size_t code_bytes = packed_size(num_subvectors(length, s.d), code_bits(s.k));
  u.code = unpack_codes(r.raw(code_bytes), s.k, length, s.d);
  u.code.layer_id = static_cast<int>(layer);
  u.code.codebook_index = static_cast<int>(cb);
  u.residual = read_entries(r, length, k);
  u.pseudo.layer_id = static_cast<int>(layer);
  u.pseudo.source_codebook_index = static_cast<int>(cb);
  u.pseudo.dim = s.d;
  const std::size_t rows = s.k / 2;
  u.pseudo.centroids.resize(rows * s.d);
  for (auto& v : u.pseudo.centroids) v = r.f32();
  u.pseudo.usage.resize(rows);
  for (auto& c : u.pseudo.usage) c = r.u32();
  return u;
}

}  // namespace detail

inline Bytes serialize_packet(const UplinkPacket& packet, const PacketSchema& schema) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(packet_kind(packet)));
  w.u32(packet_client_id(packet));
  std::visit(
      [&](const auto& p) {
        if (p.layers.size() != schema.size()) throw ShapeError("packet/schema layer count mismatch");
        w.u16(static_cast<std::uint16_t>(p.layers.size()));
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
          const auto id = static_cast<std::uint16_t>(l);
          const auto& layer = p.layers[l];
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, ClientUpdatePacket>) {
            detail::write_pq_layer(w, id, layer, schema[l].k);
          } else if constexpr (std::is_same_v<T, DensePacket>) {
            w.u16(id);
            w.u32(static_cast<std::uint32_t>(layer.size()));
            for (float v : layer) w.f32(v);
          } else if constexpr (std::is_same_v<T, ScalarQuantPacket>) {
            w.u16(id);
            w.u32(static_cast<std::uint32_t>(layer.length));
            w.u8(static_cast<std::uint8_t>(layer.bits));
            w.f32(layer.lo);
            w.f32(layer.hi);
            w.raw(pack_bits(layer.levels, layer.bits));
          } else {
            w.u16(id);
            w.u32(static_cast<std::uint32_t>(layer.length));
            w.u32(static_cast<std::uint32_t>(layer.entries.size()));
            detail::write_entries(w, layer);
          }
        }
      },
      packet);
  return std::move(w).take();
}

inline UplinkPacket deserialize_packet(std::span<const std::uint8_t> bytes, const PacketSchema& schema) {
  ByteReader r(bytes);
  const auto kind = static_cast<PacketKind>(r.u8());
  const std::uint32_t client = r.u32();
  const std::size_t n_layers = r.u16();
  if (n_layers != schema.size()) throw CorruptData("corrupt packet");

  auto check_header = [&](std::size_t l) {
    if (r.u16() != l) throw CorruptData("corrupt packet");
    const std::size_t length = r.u32();
    if (length != schema[l].length) throw CorruptData("corrupt packet");
    return length;
  };

  UplinkPacket out;
  switch (kind) {
    case PacketKind::pq: {
      ClientUpdatePacket p{client, {}};
      for (std::size_t l = 0; l < n_layers; ++l) p.layers.push_back(detail::read_pq_layer(r, l, schema[l]));
      out = std::move(p);
      break;
    }
    case PacketKind::dense: {
      DensePacket p{client, {}};
      for (std::size_t l = 0; l < n_layers; ++l) {
        Vector v(check_header(l));
        for (auto& x : v) x = r.f32();
        p.layers.push_back(std::move(v));
      }
      out = std::move(p);
      break;
    }
    case PacketKind::scalar: {
      ScalarQuantPacket p{client, {}};
      for (std::size_t l = 0; l < n_layers; ++l) {
        ScalarQuantLayer q;
        q.length = check_header(l);
        q.bits = r.u8();
        if (q.bits < 1 || q.bits > 16) throw CorruptData("corrupt packet");
        q.lo = r.f32();
        q.hi = r.f32();
        q.levels = unpack_bits(r.raw(packed_size(q.length, q.bits)), q.length, q.bits);
        p.layers.push_back(std::move(q));
      }
      out = std::move(p);
      break;
    }
    case PacketKind::sparse: {
      SparsePacket p{client, {}};
      for (std::size_t l = 0; l < n_layers; ++l) {
        const std::size_t length = check_header(l);
        const std::size_t k = r.u32();
        p.layers.push_back(detail::read_entries(r, length, k));
      }
      out = std::move(p);
      break;
    }
    default:
      throw CorruptData("corrupt packet");
  }
  if (!r.done()) throw CorruptData("corrupt packet");
  return out;
}

inline DensePacket dense_packet(std::uint32_t client_id, const std::vector<Vector>& update) {
  return DensePacket{client_id, update};
}

inline ScalarQuantPacket baseline_scalar_quantize(std::uint32_t client_id,
                                                  const std::vector<Vector>& update, unsigned bits) {
  ScalarQuantPacket p{client_id, {}};
  for (const auto& z : update) p.layers.push_back(scalar_quantize(z, bits));
  return p;
}

inline SparsePacket baseline_topk(std::uint32_t client_id, const std::vector<Vector>& update,
                                  double rho) {
  SparsePacket p{client_id, {}};
  for (const auto& z : update) p.layers.push_back(topk_prune(z, rho));
  return p;
}

}  // namespace fedmpq
