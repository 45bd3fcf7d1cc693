// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Comparison compressors: per-layer min-max scalar quantization and plain
// top-k magnitude pruning of the update itself.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedmpq/error.hpp"
#include "fedmpq/pq_codec.hpp"

namespace fedmpq {

struct ScalarQuantLayer {
  std::size_t length = 0;
  unsigned bits = 8;
  float lo = 0.0f;
  float hi = 0.0f;
  std::vector<std::uint32_t> levels;  // each < 2^bits
  friend bool operator==(const ScalarQuantLayer&, const ScalarQuantLayer&) = default;
};

/// Uniform quantization of [min, max] into 2^bits levels. A constant vector
/// stores lo == hi and reconstructs exactly.
inline ScalarQuantLayer scalar_quantize(std::span<const float> z, unsigned bits) {
  detail::require(bits >= 1 && bits <= 16, "scalar quantization bits must lie in [1, 16]");
  ScalarQuantLayer out;
  out.length = z.size();
  out.bits = bits;
  out.levels.assign(z.size(), 0);
  if (z.empty()) return out;
  const auto [mn, mx] = std::minmax_element(z.begin(), z.end());
  out.lo = *mn;
  out.hi = *mx;
  if (out.hi == out.lo) return out;
  const double top = static_cast<double>((1u << bits) - 1u);
  const double span = static_cast<double>(out.hi) - out.lo;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double t = (static_cast<double>(z[i]) - out.lo) / span * top;
    out.levels[i] = static_cast<std::uint32_t>(std::clamp(std::nearbyint(t), 0.0, top));
  }
  return out;
}

inline Vector scalar_dequantize(const ScalarQuantLayer& q) {
  Vector out(q.length, q.lo);
  if (q.hi == q.lo) return out;
  const double step = (static_cast<double>(q.hi) - q.lo) / static_cast<double>((1u << q.bits) - 1u);
  for (std::size_t i = 0; i < q.length; ++i) {
    out[i] = static_cast<float>(q.lo + step * q.levels[i]);
  }
  return out;
}

/// Top-k pruning of the update with no quantization stage.
inline SparseResidual topk_prune(std::span<const float> z, double rho) {
  detail::require(rho > 0.0 && rho <= 1.0, "top-k ratio must lie in (0, 1]");
  return prune_residual(z, rho);
}

}  // namespace fedmpq
