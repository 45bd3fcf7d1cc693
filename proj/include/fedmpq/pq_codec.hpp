// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/**
 * Per-layer multi-codebook product quantization of update vectors.
 *
 * A layer update z of length L is cut into ceil(L/D) subvectors of length D
 * (the last one zero-padded), each subvector is replaced by the index of its
 * nearest codeword, and the client keeps whichever of the M codebooks gives
 * the smallest squared reconstruction error. What the quantizer misses is
 * returned as a residual, of which only the largest-magnitude entries are
 * kept. Clients additionally report EMA-updated codewords ("pseudo-centroids")
 * that the server uses to regenerate codebooks for the next round.
 *
 * All indices are 0-based: codeword indices in [0, K), codebook indices in
 * [0, M).
 */

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedmpq/bytes.hpp"
#include "fedmpq/error.hpp"

namespace fedmpq {

using Vector = std::vector<float>;

constexpr bool is_power_of_two(std::size_t k) { return k != 0 && (k & (k - 1)) == 0; }

/// Bits per code for a codebook of K entries (K must be a power of two).
constexpr unsigned code_bits(std::size_t k) {
  return static_cast<unsigned>(std::countr_zero(k));
}

constexpr std::size_t num_subvectors(std::size_t length, std::size_t dim) {
  return (length + dim - 1) / dim;
}

/// K codewords of dimension D, stored row-major.
class Codebook {
 public:
  Codebook() = default;

  Codebook(std::size_t k, std::size_t d, std::vector<float> codewords, int layer_id = 0,
           int index = 0)
      : k_(k), d_(d), layer_id_(layer_id), index_(index), data_(std::move(codewords)) {
    if (!is_power_of_two(k)) throw ConfigError("codebook size K must be a power of two");
    if (d == 0) throw ConfigError("codeword length D must be positive");
    if (data_.size() != k * d) throw ShapeError("codebook data must hold K*D values");
  }

  static Codebook zeros(std::size_t k, std::size_t d, int layer_id = 0, int index = 0) {
    return Codebook(k, d, std::vector<float>(k * d, 0.0f), layer_id, index);
  }

  [[nodiscard]] std::size_t size() const { return k_; }
  [[nodiscard]] std::size_t dim() const { return d_; }
  [[nodiscard]] int layer_id() const { return layer_id_; }
  [[nodiscard]] int index() const { return index_; }
  void set_index(int index) { index_ = index; }
  void set_layer_id(int id) { layer_id_ = id; }

  [[nodiscard]] std::span<const float> codeword(std::size_t i) const {
    return {data_.data() + i * d_, d_};
  }
  [[nodiscard]] std::span<float> codeword(std::size_t i) { return {data_.data() + i * d_, d_}; }
  [[nodiscard]] const std::vector<float>& data() const { return data_; }

  [[nodiscard]] bool has_zero_codeword() const {
    for (std::size_t i = 0; i < k_; ++i) {
      auto c = codeword(i);
      if (std::all_of(c.begin(), c.end(), [](float v) { return v == 0.0f; })) return true;
    }
    return false;
  }

  friend bool operator==(const Codebook&, const Codebook&) = default;

 private:
  std::size_t k_ = 0;
  std::size_t d_ = 0;
  int layer_id_ = 0;
  int index_ = 0;
  std::vector<float> data_;
};

struct QuantizationCode {
  int layer_id = 0;
  int codebook_index = 0;
  std::vector<std::uint32_t> codes;  // one per subvector, each < K
  std::size_t length = 0;            // L
  std::size_t pad_count = 0;         // ceil(L/D)*D - L

  friend bool operator==(const QuantizationCode&, const QuantizationCode&) = default;
};

struct ResidualEntry {
  std::uint32_t position = 0;
  float value = 0.0f;
  friend bool operator==(const ResidualEntry&, const ResidualEntry&) = default;
};

struct SparseResidual {
  std::vector<ResidualEntry> entries;  // strictly increasing positions
  std::size_t length = 0;
  friend bool operator==(const SparseResidual&, const SparseResidual&) = default;
};

/// Top-usage EMA-updated codewords reported by one client for one layer.
struct PseudoCentroidSet {
  int layer_id = 0;
  int source_codebook_index = 0;
  std::size_t dim = 0;
  std::vector<float> centroids;     // rows x dim, by descending usage
  std::vector<std::uint32_t> usage;  // one per row

  [[nodiscard]] std::size_t size() const { return usage.size(); }
  [[nodiscard]] std::span<const float> centroid(std::size_t i) const {
    return {centroids.data() + i * dim, dim};
  }
  friend bool operator==(const PseudoCentroidSet&, const PseudoCentroidSet&) = default;
};

struct ContractionReport {
  double input_norm = 0.0;
  double error_norm = 0.0;
  double tau_observed = 0.0;
};

/// Zero-padded subvectors of one layer update, stored contiguously.
struct Subvectors {
  std::size_t dim = 0;
  std::size_t length = 0;  // original L
  std::size_t pad_count = 0;
  std::vector<float> data;

  [[nodiscard]] std::size_t count() const { return dim == 0 ? 0 : data.size() / dim; }
  [[nodiscard]] std::span<const float> operator[](std::size_t i) const {
    return {data.data() + i * dim, dim};
  }
};

inline Subvectors split_subvectors(std::span<const float> z, std::size_t dim) {
  if (z.empty()) throw std::invalid_argument("empty vector");
  detail::require(dim >= 1, "subvector length D must be positive");
  Subvectors out;
  out.dim = dim;
  out.length = z.size();
  const std::size_t rows = num_subvectors(z.size(), dim);
  out.pad_count = rows * dim - z.size();
  out.data.assign(rows * dim, 0.0f);
  std::copy(z.begin(), z.end(), out.data.begin());
  return out;
}

namespace detail {

inline double squared_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
    acc += diff * diff;
  }
  return acc;
}

/// Index of the nearest codeword; ties resolve to the lowest index.
inline std::uint32_t nearest_codeword(std::span<const float> sub, const Codebook& cb) {
  std::uint32_t best = 0;
  double best_dist = squared_distance(sub, cb.codeword(0));
  for (std::size_t k = 1; k < cb.size(); ++k) {
    const double d = squared_distance(sub, cb.codeword(k));
    if (d < best_dist) {
      best_dist = d;
      best = static_cast<std::uint32_t>(k);
    }
  }
  return best;
}

inline double squared_error(std::span<const float> a, std::span<const float> b) {
  return squared_distance(a, b);
}

}  // namespace detail

/// Reconstruction of a code: selected codewords concatenated, pad dropped.
inline Vector dequantize(const QuantizationCode& code, const Codebook& cb) {
  if (code.codebook_index != cb.index()) {
    throw ShapeError("code was produced against codebook " +
                     std::to_string(code.codebook_index) + ", got " +
                     std::to_string(cb.index()));
  }
  const std::size_t d = cb.dim();
  if (code.codes.size() != num_subvectors(code.length, d)) throw CorruptData("corrupt code");
  Vector out(code.codes.size() * d);
  for (std::size_t m = 0; m < code.codes.size(); ++m) {
    if (code.codes[m] >= cb.size()) throw CorruptData("corrupt code");
    auto c = cb.codeword(code.codes[m]);
    std::copy(c.begin(), c.end(), out.begin() + static_cast<std::ptrdiff_t>(m * d));
  }
  out.resize(code.length);
  return out;
}

struct QuantizeResult {
  QuantizationCode code;
  Vector reconstruction;
  double squared_error = 0.0;  // ||z - reconstruction||^2 over the L real positions
};

inline QuantizeResult quantize_with_codebook(std::span<const float> z, const Codebook& cb) {
  const Subvectors subs = split_subvectors(z, cb.dim());
  QuantizeResult out;
  out.code.layer_id = cb.layer_id();
  out.code.codebook_index = cb.index();
  out.code.length = z.size();
  out.code.pad_count = subs.pad_count;
  out.code.codes.resize(subs.count());
  for (std::size_t m = 0; m < subs.count(); ++m) {
    out.code.codes[m] = detail::nearest_codeword(subs[m], cb);
  }
  out.reconstruction = dequantize(out.code, cb);
  out.squared_error = detail::squared_error(z, out.reconstruction);
  return out;
}

/// Quantizes against every codebook and keeps the one with the smallest
/// squared error (ties go to the earliest codebook in `codebooks`).
inline QuantizeResult quantize_best(std::span<const float> z, std::span<const Codebook> codebooks) {
  if (codebooks.empty()) throw std::invalid_argument("quantize_best needs at least one codebook");
  for (const auto& cb : codebooks) {
    if (cb.size() != codebooks.front().size() || cb.dim() != codebooks.front().dim()) {
      throw ShapeError("all codebooks of a layer must share K and D");
    }
  }
  QuantizeResult best = quantize_with_codebook(z, codebooks.front());
  for (std::size_t n = 1; n < codebooks.size(); ++n) {
    QuantizeResult cand = quantize_with_codebook(z, codebooks[n]);
    if (cand.squared_error < best.squared_error) best = std::move(cand);
  }
  return best;
}

/// Number of residual entries kept for ratio rho over L values: ceil(rho*L).
inline std::size_t residual_budget(std::size_t length, double rho) {
  // The small offset absorbs products such as 0.07 * 100 = 7.000000000000001.
  const double k = std::ceil(rho * static_cast<double>(length) - 1e-9);
  return std::min<std::size_t>(length, k <= 0.0 ? 0 : static_cast<std::size_t>(k));
}

/// Keeps the ceil(rho*L) largest-magnitude entries; ties go to lower positions.
inline SparseResidual prune_residual(std::span<const float> r, double rho) {
  detail::require(rho >= 0.0 && rho <= 1.0, "residual ratio must lie in [0, 1]");
  SparseResidual out;
  out.length = r.size();
  const std::size_t k = residual_budget(r.size(), rho);
  if (k == 0) return out;

  std::vector<std::uint32_t> order(r.size());
  std::iota(order.begin(), order.end(), 0u);
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    const float fa = std::fabs(r[a]);
    const float fb = std::fabs(r[b]);
    return fa != fb ? fa > fb : a < b;
  };
  if (k < order.size()) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1),
                     order.end(), before);
    order.resize(k);
  }
  std::sort(order.begin(), order.end());
  out.entries.reserve(k);
  for (std::uint32_t p : order) out.entries.push_back({p, r[p]});
  return out;
}

inline Vector densify(const SparseResidual& s) {
  Vector out(s.length, 0.0f);
  for (const auto& e : s.entries) {
    if (e.position >= s.length) throw CorruptData("corrupt packet");
    out[e.position] = e.value;
  }
  return out;
}

/// Applies the codeword EMA  c <- c*(1-gamma) + gamma*mean(assigned)  to a
/// scratch copy and returns the floor(K/2) most-used updated codewords. `cb`
/// itself is left untouched.
inline PseudoCentroidSet update_pseudo_centroids(const Codebook& cb, const QuantizationCode& code,
                                                 const Subvectors& subvectors, double gamma) {
  detail::require(gamma > 0.0 && gamma <= 1.0, "EMA factor gamma must lie in (0, 1]");
  if (subvectors.dim != cb.dim() || subvectors.count() != code.codes.size()) {
    throw ShapeError("subvectors do not match the quantization code");
  }
  const std::size_t k = cb.size();
  const std::size_t d = cb.dim();
  std::vector<double> sums(k * d, 0.0);
  std::vector<std::uint32_t> usage(k, 0);
  for (std::size_t m = 0; m < code.codes.size(); ++m) {
    const std::uint32_t c = code.codes[m];
    if (c >= k) throw CorruptData("corrupt code");
    ++usage[c];
    auto s = subvectors[m];
    for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += s[j];
  }

  std::vector<std::uint32_t> order(k);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return usage[a] > usage[b]; });

  PseudoCentroidSet out;
  out.layer_id = cb.layer_id();
  out.source_codebook_index = cb.index();
  out.dim = d;
  const std::size_t keep = k / 2;
  out.centroids.reserve(keep * d);
  out.usage.reserve(keep);
  for (std::size_t r = 0; r < keep; ++r) {
    const std::uint32_t i = order[r];
    auto c = cb.codeword(i);
    for (std::size_t j = 0; j < d; ++j) {
      if (usage[i] == 0) {
        out.centroids.push_back(c[j]);
      } else {
        const double mean = sums[i * d + j] / usage[i];
        out.centroids.push_back(static_cast<float>(c[j] * (1.0 - gamma) + gamma * mean));
      }
    }
    out.usage.push_back(usage[i]);
  }
  return out;
}

/// Packs codes at log2(K) bits each, LSB-first, zero-padded to a byte.
inline Bytes pack_codes(const QuantizationCode& code, std::size_t k) {
  if (!is_power_of_two(k)) throw ConfigError("codebook size K must be a power of two");
  for (std::uint32_t c : code.codes) {
    if (c >= k) throw CorruptData("corrupt code");
  }
  return pack_bits(code.codes, code_bits(k));
}

inline QuantizationCode unpack_codes(std::span<const std::uint8_t> bytes, std::size_t k,
                                     std::size_t length, std::size_t dim) {
  if (!is_power_of_two(k)) throw ConfigError("codebook size K must be a power of two");
  detail::require(dim >= 1, "subvector length D must be positive");
  QuantizationCode code;
  code.length = length;
  const std::size_t rows = num_subvectors(length, dim);
  code.pad_count = rows * dim - length;
  code.codes = unpack_bits(bytes, rows, code_bits(k));
  return code;
}

inline ContractionReport contraction(std::span<const float> z, std::span<const float> reconstruction) {
  ContractionReport rep;
  double in = 0.0;
  for (float v : z) in += static_cast<double>(v) * v;
  rep.input_norm = std::sqrt(in);
  rep.error_norm = std::sqrt(detail::squared_error(z, reconstruction));
  rep.tau_observed = rep.input_norm > 0.0 ? rep.error_norm / rep.input_norm : 0.0;
  return rep;
}

/// Everything one client uploads for one layer.
struct PqLayerUpdate {
  QuantizationCode code;
  SparseResidual residual;
  PseudoCentroidSet pseudo;
  friend bool operator==(const PqLayerUpdate&, const PqLayerUpdate&) = default;
};

struct EncodedLayer {
  PqLayerUpdate update;
  double squared_error = 0.0;  // of the PQ reconstruction alone
  ContractionReport contraction;
};

/// Client-side compression of one layer: best-of-M quantization, residual
/// pruning of the winner, pseudo-centroids from the winner.
inline EncodedLayer encode_layer(std::span<const float> z, std::span<const Codebook> codebooks,
                                 double rho, double gamma) {
  QuantizeResult q = quantize_best(z, codebooks);
  const Codebook* chosen = nullptr;
  for (const auto& cb : codebooks) {
    if (cb.index() == q.code.codebook_index) {
      chosen = &cb;
      break;
    }
  }
  Vector residual(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) residual[i] = z[i] - q.reconstruction[i];

  EncodedLayer out;
  out.squared_error = q.squared_error;
  out.contraction = contraction(z, q.reconstruction);
  out.update.residual = prune_residual(residual, rho);
  out.update.pseudo =
      update_pseudo_centroids(*chosen, q.code, split_subvectors(z, chosen->dim()), gamma);
  out.update.code = std::move(q.code);
  return out;
}

}  // namespace fedmpq
