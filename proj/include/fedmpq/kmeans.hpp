// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Weighted k-means with k-means++ seeding and Lloyd refinement. Deterministic
// for a given seed; single-threaded.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedmpq/error.hpp"

namespace fedmpq {

struct KMeansConfig {
  std::size_t k = 8;
  std::size_t max_iters = 25;
  std::uint64_t seed = 0;
  double tol = 1e-6;
};

struct KMeansResult {
  std::size_t dim = 0;
  std::vector<float> centroids;            // k x dim
  std::vector<std::uint32_t> assignment;  // one per point
  std::vector<double> inertia_history;    // after every assignment step
  std::size_t iterations = 0;
  std::vector<std::string> warnings;

  [[nodiscard]] std::span<const float> centroid(std::size_t i) const {
    return {centroids.data() + i * dim, dim};
  }
};

namespace detail {

/// Uniform double in [0, 1) with a portable bit recipe.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double sq_dist(const float* a, const double* c, std::size_t d) {
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - c[j];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace detail

/**
 * Clusters `points` (row-major, `dim` columns) into cfg.k centroids.
 *
 * Seeding draws the first centre proportionally to weight and each further
 * centre proportionally to weight * squared distance. Lloyd iterations stop
 * when no centroid moves by `tol` or more, or after `max_iters`. A cluster
 * that ends an assignment step with no weight is re-seeded at the point that
 * is farthest from its current centroid. Fewer distinct points than k yields
 * duplicate centroids and a warning.
 */
inline KMeansResult kmeans(std::span<const float> points, std::size_t dim,
                           std::optional<std::span<const double>> weights,
                           const KMeansConfig& cfg) {
  detail::require(dim >= 1, "kmeans: dim must be positive");
  detail::require(cfg.k >= 1, "kmeans: k must be positive");
  detail::require(cfg.max_iters >= 1, "kmeans: max_iters must be positive");
  detail::require(cfg.tol >= 0.0, "kmeans: tol must be non-negative");
  detail::require(points.size() % dim == 0, "kmeans: points size is not a multiple of dim");
  const std::size_t n = points.size() / dim;
  detail::require(n >= 1, "kmeans: need at least one point");

  std::vector<double> w(n, 1.0);
  if (weights) {
    detail::require(weights->size() == n, "kmeans: one weight per point");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      detail::require((*weights)[i] >= 0.0, "kmeans: weights must be non-negative");
      w[i] = (*weights)[i];
      total += w[i];
    }
    if (total <= 0.0) std::fill(w.begin(), w.end(), 1.0);
  }

  const std::size_t k = cfg.k;
  KMeansResult res;
  res.dim = dim;
  std::vector<double> c(k * dim, 0.0);
  auto pt = [&](std::size_t i) { return points.data() + i * dim; };
  auto set_centre = [&](std::size_t slot, std::size_t i) {
    for (std::size_t j = 0; j < dim; ++j) c[slot * dim + j] = pt(i)[j];
  };

  std::mt19937_64 rng(cfg.seed);
  bool degenerate = false;

  // k-means++ seeding.
  {
    std::vector<double> mass(n);
    auto pick = [&](const std::vector<double>& m) -> std::optional<std::size_t> {
      double total = 0.0;
      for (double v : m) total += v;
      if (!(total > 0.0)) return std::nullopt;
      double u = detail::unit_uniform(rng) * total;
      std::size_t last = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (m[i] <= 0.0) continue;
        last = i;
        if (u < m[i]) return i;
        u -= m[i];
      }
      return last;
    };
    set_centre(0, *pick(w));
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    for (std::size_t s = 1; s < k; ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        best[i] = std::min(best[i], detail::sq_dist(pt(i), &c[(s - 1) * dim], dim));
        mass[i] = w[i] * best[i];
      }
      if (auto i = pick(mass)) {
        set_centre(s, *i);
      } else {
        degenerate = true;
        for (std::size_t j = 0; j < dim; ++j) c[s * dim + j] = c[j];
      }
    }
  }

  res.assignment.assign(n, 0);
  std::vector<double> dist(n, 0.0);
  auto assign = [&] {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t arg = 0;
      double bd = detail::sq_dist(pt(i), &c[0], dim);
      for (std::size_t s = 1; s < k; ++s) {
        const double d = detail::sq_dist(pt(i), &c[s * dim], dim);
        if (d < bd) {
          bd = d;
          arg = static_cast<std::uint32_t>(s);
        }
      }
      res.assignment[i] = arg;
      dist[i] = bd;
      inertia += w[i] * bd;
    }
    return inertia;
  };

  std::vector<double> sums(k * dim);
  std::vector<double> mass(k);
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    res.inertia_history.push_back(assign());
    ++res.iterations;

    std::fill(mass.begin(), mass.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) mass[res.assignment[i]] += w[i];

    // Re-seed weightless clusters at the farthest remaining point.
    for (std::size_t s = 0; s < k; ++s) {
      if (mass[s] > 0.0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (w[i] <= 0.0 || mass[res.assignment[i]] <= w[i]) continue;
        if (dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      if (far == n || far_d <= 0.0) {
        degenerate = true;
        continue;
      }
      mass[res.assignment[far]] -= w[far];
      res.assignment[far] = static_cast<std::uint32_t>(s);
      mass[s] = w[far];
      dist[far] = 0.0;
    }

    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t s = res.assignment[i];
      for (std::size_t j = 0; j < dim; ++j) sums[s * dim + j] += w[i] * pt(i)[j];
    }
    double moved = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
      if (mass[s] <= 0.0) continue;
      double step = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double next = sums[s * dim + j] / mass[s];
        step += (next - c[s * dim + j]) * (next - c[s * dim + j]);
        c[s * dim + j] = next;
      }
      moved = std::max(moved, std::sqrt(step));
    }
    if (moved < cfg.tol) break;
  }

  res.centroids.resize(k * dim);
  for (std::size_t i = 0; i < k * dim; ++i) res.centroids[i] = static_cast<float>(c[i]);
  if (degenerate) {
    res.warnings.push_back("kmeans: fewer distinct points than k (" + std::to_string(k) +
                           "); duplicate centroids returned");
  }
  return res;
}

}  // namespace fedmpq
