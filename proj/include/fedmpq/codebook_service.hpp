// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/**
 * Server-side codebook lifecycle.
 *
 * Each round, slot 0 of every layer's codebook set is learned by k-means on
 * the update obtained by training the global model on the server's public
 * data. The remaining slots are learned from the pseudo-centroids clients
 * uploaded in the previous round: the pooled pseudo-centroids are shuffled,
 * cut into equal parts and each part is clustered (weighted by usage counts)
 * into one codebook. Without public data every slot comes from
 * pseudo-centroids. Every finished codebook holds an exact zero codeword.
 */

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmpq/bytes.hpp"
#include "fedmpq/dataset.hpp"
#include "fedmpq/kmeans.hpp"
#include "fedmpq/model.hpp"
#include "fedmpq/pq_codec.hpp"
#include "fedmpq/seed.hpp"
#include "fedmpq/train.hpp"

namespace fedmpq {

struct CodebookSet {
  int layer_id = 0;
  int round = 0;
  std::vector<Codebook> codebooks;

  [[nodiscard]] std::size_t count() const { return codebooks.size(); }
  [[nodiscard]] std::size_t codebook_size() const {
    return codebooks.empty() ? 0 : codebooks.front().size();
  }
  [[nodiscard]] std::size_t dim() const { return codebooks.empty() ? 0 : codebooks.front().dim(); }
  friend bool operator==(const CodebookSet&, const CodebookSet&) = default;
};

/// Replaces the smallest-norm codeword (lowest index on ties) by exact zeros.
inline Codebook enforce_zero_codeword(Codebook cb) {
  std::size_t arg = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < cb.size(); ++i) {
    double n = 0.0;
    for (float v : cb.codeword(i)) n += static_cast<double>(v) * v;
    if (best < 0.0 || n < best) {
      best = n;
      arg = i;
    }
  }
  auto c = cb.codeword(arg);
  std::fill(c.begin(), c.end(), 0.0f);
  return cb;
}

// Wire layout: layer_id u16, round u32, M u16, K u32, D u32, then M*K*D f32.
inline Bytes serialize_codebook_set(const CodebookSet& set) {
  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(set.layer_id));
  w.u32(static_cast<std::uint32_t>(set.round));
  w.u16(static_cast<std::uint16_t>(set.count()));
  w.u32(static_cast<std::uint32_t>(set.codebook_size()));
  w.u32(static_cast<std::uint32_t>(set.dim()));
  for (const auto& cb : set.codebooks) {
    for (float v : cb.data()) w.f32(v);
  }
  return std::move(w).take();
}

inline CodebookSet deserialize_codebook_set(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  CodebookSet set;
  set.layer_id = r.u16();
  set.round = static_cast<int>(r.u32());
  const std::size_t m = r.u16();
  const std::size_t k = r.u32();
  const std::size_t d = r.u32();
  if (m == 0 || !is_power_of_two(k) || d == 0) throw CorruptData("corrupt packet");
  if (r.remaining() != m * k * d * 4) throw CorruptData("corrupt packet");
  for (std::size_t n = 0; n < m; ++n) {
    std::vector<float> data(k * d);
    for (auto& v : data) v = r.f32();
    set.codebooks.emplace_back(k, d, std::move(data), set.layer_id, static_cast<int>(n));
  }
  return set;
}

constexpr std::size_t codebook_set_wire_size(std::size_t m, std::size_t k, std::size_t d) {
  return 16 + m * k * d * 4;
}

/// One local epoch on the public set from the current global model, using the
/// clients' hyperparameters. Returns the per-layer update.
inline Update simulate_public_gradient(const ModelState& model, const Dataset& public_data,
                                       const TrainConfig& cfg, std::uint64_t seed) {
  if (public_data.empty()) throw std::invalid_argument("simulate_public_gradient: empty public data");
  return local_train(model, public_data, cfg, seed);
}

struct CodebookServiceConfig {
  std::size_t m = 4;  // codebooks per layer
  std::size_t k = 32;
  std::size_t d = 2;
  std::size_t max_iters = 25;
  double tol = 1e-6;
  bool weighted = true;          // weight pseudo-centroids by usage count
  std::size_t part_sample = 0;   // pseudo-centroids drawn per part; 0 = all
  std::uint64_t seed = 0;
};

struct LayerCodebookInput {
  const Vector* public_update = nullptr;          // absent without public data
  std::span<const PseudoCentroidSet> pseudo;       // this layer's pooled uploads
  const CodebookSet* previous = nullptr;           // last round's set, if any
};

namespace detail {

inline Codebook learn_codebook(std::span<const float> points, std::size_t dim,
                               std::optional<std::span<const double>> weights,
                               const CodebookServiceConfig& cfg, std::uint64_t seed,
                               std::vector<std::string>* warnings) {
  KMeansConfig kc{cfg.k, cfg.max_iters, seed, cfg.tol};
  KMeansResult km = kmeans(points, dim, weights, kc);
  if (warnings) warnings->insert(warnings->end(), km.warnings.begin(), km.warnings.end());
  return Codebook(cfg.k, dim, std::move(km.centroids));
}

}  // namespace detail

/**
 * Builds one layer's codebook set for `round`.
 *
 * Bootstrap (no pseudo-centroids and no previous set): every slot is learned
 * from the public update with a distinct k-means seed, or is all zeros when
 * there is no public data either.
 */
inline CodebookSet generate_layer_codebooks(int layer_id, int round, const LayerCodebookInput& in,
                                            const CodebookServiceConfig& cfg,
                                            std::vector<std::string>* warnings = nullptr) {
  if (cfg.m < 1) throw ConfigError("codebook count M must be at least 1");
  if (!is_power_of_two(cfg.k)) throw ConfigError("codebook size K must be a power of two");
  if (cfg.d < 1) throw ConfigError("codeword length D must be at least 1");

  const auto lid = static_cast<std::uint64_t>(layer_id);
  const auto rnd = static_cast<std::uint64_t>(round);
  const bool has_public = in.public_update != nullptr && !in.public_update->empty();

  std::vector<std::optional<Codebook>> slots(cfg.m);
  std::optional<Subvectors> public_subs;
  if (has_public) public_subs = split_subvectors(*in.public_update, cfg.d);

  auto bootstrap = [&](std::size_t slot) {
    if (!public_subs) return Codebook::zeros(cfg.k, cfg.d);
    return detail::learn_codebook(public_subs->data, cfg.d, std::nullopt, cfg,
                                  derive_seed(cfg.seed, Stream::kmeans, {lid, rnd, 0, slot}),
                                  warnings);
  };

  std::size_t first_pseudo = 0;
  if (has_public) {
    slots[0] = bootstrap(0);
    first_pseudo = 1;
  }
  const std::size_t parts = cfg.m - first_pseudo;

  // Pool this layer's pseudo-centroids in upload order, then shuffle.
  std::vector<float> pool;
  std::vector<double> usage;
  for (const auto& p : in.pseudo) {
    if (p.dim != cfg.d) throw ShapeError("pseudo-centroid dim does not match D");
    pool.insert(pool.end(), p.centroids.begin(), p.centroids.end());
    for (auto u : p.usage) usage.push_back(static_cast<double>(u));
  }
  const std::size_t n = usage.size();
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  shuffle_indices(order, derive_seed(cfg.seed, Stream::shuffle, {lid, rnd}));

  const std::size_t base = parts == 0 ? 0 : n / parts;
  std::size_t begin = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t slot = first_pseudo + p;
    const std::size_t len = (p + 1 == parts) ? n - begin : base;
    std::span<const std::uint32_t> part(order.data() + begin, len);
    begin += len;
    if (cfg.part_sample > 0 && part.size() > cfg.part_sample) part = part.first(cfg.part_sample);

    if (part.empty()) {
      if (in.previous != nullptr && slot < in.previous->count()) {
        slots[slot] = in.previous->codebooks[slot];
      } else {
        slots[slot] = bootstrap(slot);
      }
      continue;
    }
    std::vector<float> pts;
    std::vector<double> wts;
    pts.reserve(part.size() * cfg.d);
    for (std::uint32_t i : part) {
      pts.insert(pts.end(), pool.begin() + static_cast<std::ptrdiff_t>(i * cfg.d),
                 pool.begin() + static_cast<std::ptrdiff_t>((i + 1) * cfg.d));
      wts.push_back(usage[i]);
    }
    std::optional<std::span<const double>> w;
    if (cfg.weighted) w = std::span<const double>(wts);
    slots[slot] = detail::learn_codebook(pts, cfg.d, w, cfg,
                                         derive_seed(cfg.seed, Stream::kmeans, {lid, rnd, 1, slot}),
                                         warnings);
  }

  CodebookSet set;
  set.layer_id = layer_id;
  set.round = round;
  for (std::size_t s = 0; s < cfg.m; ++s) {
    Codebook cb = enforce_zero_codeword(std::move(*slots[s]));
    cb.set_layer_id(layer_id);
    cb.set_index(static_cast<int>(s));
    set.codebooks.push_back(std::move(cb));
  }
  return set;
}

/// All layers. `public_update` may be empty (no public data); `pseudo_by_layer`
/// may be empty (round 0) or hold one pooled list per layer.
inline std::vector<CodebookSet> generate_codebooks(
    const Update& public_update, const std::vector<std::vector<PseudoCentroidSet>>& pseudo_by_layer,
    const std::vector<CodebookSet>& previous, std::size_t n_layers, int round,
    const CodebookServiceConfig& cfg, std::vector<std::string>* warnings = nullptr) {
  if (!public_update.empty() && public_update.size() != n_layers) {
    throw ShapeError("public update has the wrong number of layers");
  }
  std::vector<CodebookSet> out;
  out.reserve(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    LayerCodebookInput in;
    if (!public_update.empty()) in.public_update = &public_update[l];
    if (l < pseudo_by_layer.size()) in.pseudo = pseudo_by_layer[l];
    if (l < previous.size()) in.previous = &previous[l];
    out.push_back(generate_layer_codebooks(static_cast<int>(l), round, in, cfg, warnings));
  }
  return out;
}

}  // namespace fedmpq
