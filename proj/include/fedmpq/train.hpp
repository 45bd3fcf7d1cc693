// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "fedmpq/dataset.hpp"
#include "fedmpq/error.hpp"
#include "fedmpq/model.hpp"

namespace fedmpq {

struct TrainConfig {
  double lr_local = 0.9;   // client SGD step
  double lr_server = 0.1;  // server step applied to the mean update
  std::size_t local_epochs = 1;
  std::size_t batch_size = 8;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Per-layer update vector: local parameters minus global parameters.
using Update = LayerVectors<float>;

/// Fisher-Yates with the portable 64-bit engine; std::shuffle's draw pattern is
/// implementation defined.
inline void shuffle_indices(std::vector<std::uint32_t>& idx, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

/// Minibatch SGD over `data` from the global model; returns theta_local - theta_global.
inline Update local_train(const ModelState& global, const Dataset& data, const TrainConfig& cfg,
                          std::uint64_t seed) {
  if (data.empty()) throw std::invalid_argument("local_train: empty dataset");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  auto params = params_as<float>(global);
  LayerVectors<float> grad;
  std::vector<std::uint32_t> order(data.size());
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0u);
    shuffle_indices(order, seed + epoch);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      loss_and_grad<float>(global.spec, params, data,
                           std::span<const std::uint32_t>(order).subspan(start, n), &grad);
      const auto lr = static_cast<float>(cfg.lr_local);
      for (std::size_t l = 0; l < params.size(); ++l) {
        for (std::size_t i = 0; i < params[l].size(); ++i) params[l][i] -= lr * grad[l][i];
      }
    }
  }
  Update z(params.size());
  for (std::size_t l = 0; l < params.size(); ++l) {
    z[l].resize(params[l].size());
    for (std::size_t i = 0; i < params[l].size(); ++i) {
      z[l][i] = params[l][i] - global.layers[l].values[i];
    }
  }
  return z;
}

/// theta <- theta + lr_server * g, and advances the round counter.
inline ModelState apply_server_update(ModelState model, const Update& g, double lr_server) {
  if (g.size() != model.layers.size()) throw ShapeError("update has the wrong number of layers");
  for (std::size_t l = 0; l < g.size(); ++l) {
    if (g[l].size() != model.layers[l].values.size()) {
      throw ShapeError("update layer " + model.layers[l].name + " has the wrong length");
    }
  }
  const auto eta = static_cast<float>(lr_server);
  for (std::size_t l = 0; l < g.size(); ++l) {
    auto& v = model.layers[l].values;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += eta * g[l][i];
  }
  ++model.round;
  return model;
}

}  // namespace fedmpq
