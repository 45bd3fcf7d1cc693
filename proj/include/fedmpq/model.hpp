// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Small differentiable classifiers: multinomial logistic regression and a
// one-hidden-layer tanh MLP, both with softmax cross-entropy. Forward and
// backward passes are templated on the scalar so gradient checks can run in
// double while training runs in float.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedmpq/dataset.hpp"
#include "fedmpq/error.hpp"

namespace fedmpq {

enum class ModelKind { logreg, mlp };

struct ModelSpec {
  ModelKind kind = ModelKind::mlp;
  std::size_t input_dim = 20;
  std::size_t hidden = 32;
  std::size_t classes = 10;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct Layer {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;

  [[nodiscard]] std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
  }
  friend bool operator==(const Layer&, const Layer&) = default;
};

struct ModelState {
  ModelSpec spec;
  std::vector<Layer> layers;
  int round = 0;

  [[nodiscard]] std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> out;
    for (const auto& l : layers) out.push_back(l.values.size());
    return out;
  }
  friend bool operator==(const ModelState&, const ModelState&) = default;
};

/// One real vector per layer; used for updates, gradients and parameters.
template <class T>
using LayerVectors = std::vector<std::vector<T>>;

inline std::vector<Layer> layer_layout(const ModelSpec& spec) {
  const std::size_t d = spec.input_dim;
  const std::size_t c = spec.classes;
  if (spec.kind == ModelKind::logreg) {
    return {{"W", {c, d}, {}}, {"b", {c}, {}}};
  }
  const std::size_t h = spec.hidden;
  return {{"W1", {h, d}, {}}, {"b1", {h}, {}}, {"W2", {c, h}, {}}, {"b2", {c}, {}}};
}

/// Uniform Glorot initialisation for weights, zero biases.
inline ModelState init_model(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.input_dim < 1 || spec.classes < 2) throw ConfigError("model: need input_dim>=1, classes>=2");
  if (spec.kind == ModelKind::mlp && (spec.hidden < 1 || spec.hidden > 64)) {
    throw ConfigError("model: mlp hidden width must lie in [1, 64]");
  }
  ModelState m;
  m.spec = spec;
  m.layers = layer_layout(spec);
  std::mt19937_64 rng(seed);
  for (auto& l : m.layers) {
    l.values.assign(l.numel(), 0.0f);
    if (l.shape.size() != 2) continue;
    const double a = std::sqrt(6.0 / static_cast<double>(l.shape[0] + l.shape[1]));
    for (auto& v : l.values) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      v = static_cast<float>((2.0 * u - 1.0) * a);
    }
  }
  return m;
}

template <class T>
LayerVectors<T> params_as(const ModelState& m) {
  LayerVectors<T> out;
  for (const auto& l : m.layers) out.emplace_back(l.values.begin(), l.values.end());
  return out;
}

namespace detail {

/// Softmax cross-entropy on `logits`; overwrites logits with dL/dlogits when
/// `want_grad` and returns the loss.
template <std::floating_point T>
T softmax_xent(std::span<T> logits, std::uint32_t label, bool want_grad) {
  const T mx = *std::max_element(logits.begin(), logits.end());
  T z = 0;
  for (T v : logits) z += std::exp(v - mx);
  const T loss = std::log(z) + mx - logits[label];
  if (want_grad) {
    for (auto& v : logits) v = std::exp(v - mx) / z;
    logits[label] -= T(1);
  }
  return loss;
}

}  // namespace detail

/**
 * Mean cross-entropy over `batch` (indices into `data`). When `grad` is non-null
 * it receives the gradient, shaped like `params`.
 */
template <std::floating_point T>
T loss_and_grad(const ModelSpec& spec, const LayerVectors<T>& params, const Dataset& data,
                std::span<const std::uint32_t> batch, LayerVectors<T>* grad) {
  const std::size_t d = spec.input_dim;
  const std::size_t c = spec.classes;
  if (data.dim != d) throw ShapeError("dataset dim does not match the model input");
  if (grad) {
    grad->resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) (*grad)[i].assign(params[i].size(), T(0));
  }
  T total = 0;
  std::vector<T> logits(c);

  if (spec.kind == ModelKind::logreg) {
    const auto& w = params[0];
    const auto& b = params[1];
    for (std::uint32_t idx : batch) {
      auto x = data.row(idx);
      for (std::size_t k = 0; k < c; ++k) {
        T acc = b[k];
        for (std::size_t j = 0; j < d; ++j) acc += w[k * d + j] * x[j];
        logits[k] = acc;
      }
      total += detail::softmax_xent<T>(logits, data.y[idx], grad != nullptr);
      if (!grad) continue;
      for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t j = 0; j < d; ++j) (*grad)[0][k * d + j] += logits[k] * x[j];
        (*grad)[1][k] += logits[k];
      }
    }
  } else {
    const std::size_t h = spec.hidden;
    const auto& w1 = params[0];
    const auto& b1 = params[1];
    const auto& w2 = params[2];
    const auto& b2 = params[3];
    std::vector<T> act(h);
    std::vector<T> dact(h);
    for (std::uint32_t idx : batch) {
      auto x = data.row(idx);
      for (std::size_t u = 0; u < h; ++u) {
        T acc = b1[u];
        for (std::size_t j = 0; j < d; ++j) acc += w1[u * d + j] * x[j];
        act[u] = std::tanh(acc);
      }
      for (std::size_t k = 0; k < c; ++k) {
        T acc = b2[k];
        for (std::size_t u = 0; u < h; ++u) acc += w2[k * h + u] * act[u];
        logits[k] = acc;
      }
      total += detail::softmax_xent<T>(logits, data.y[idx], grad != nullptr);
      if (!grad) continue;
      std::fill(dact.begin(), dact.end(), T(0));
      for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t u = 0; u < h; ++u) {
          (*grad)[2][k * h + u] += logits[k] * act[u];
          dact[u] += logits[k] * w2[k * h + u];
        }
        (*grad)[3][k] += logits[k];
      }
      for (std::size_t u = 0; u < h; ++u) {
        const T pre = dact[u] * (T(1) - act[u] * act[u]);
        for (std::size_t j = 0; j < d; ++j) (*grad)[0][u * d + j] += pre * x[j];
        (*grad)[1][u] += pre;
      }
    }
  }

  const T inv = batch.empty() ? T(0) : T(1) / static_cast<T>(batch.size());
  if (grad) {
    for (auto& g : *grad) {
      for (auto& v : g) v *= inv;
    }
  }
  return total * inv;
}

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Accuracy (argmax, ties to the lowest class) and mean cross-entropy.
inline EvalResult evaluate(const ModelState& model, const Dataset& test) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  const auto params = params_as<double>(model);
  const ModelSpec& spec = model.spec;
  EvalResult r;
  std::size_t correct = 0;
  const std::size_t d = spec.input_dim;
  const std::size_t c = spec.classes;
  std::vector<double> logits(c);
  std::vector<double> act(spec.hidden);
  double total = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto x = test.row(i);
    if (spec.kind == ModelKind::logreg) {
      for (std::size_t k = 0; k < c; ++k) {
        double acc = params[1][k];
        for (std::size_t j = 0; j < d; ++j) acc += params[0][k * d + j] * x[j];
        logits[k] = acc;
      }
    } else {
      const std::size_t h = spec.hidden;
      for (std::size_t u = 0; u < h; ++u) {
        double acc = params[1][u];
        for (std::size_t j = 0; j < d; ++j) acc += params[0][u * d + j] * x[j];
        act[u] = std::tanh(acc);
      }
      for (std::size_t k = 0; k < c; ++k) {
        double acc = params[3][k];
        for (std::size_t u = 0; u < h; ++u) acc += params[2][k * h + u] * act[u];
        logits[k] = acc;
      }
    }
    const auto pred = static_cast<std::uint32_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (pred == test.y[i]) ++correct;
    total += detail::softmax_xent<double>(logits, test.y[i], false);
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  r.loss = total / static_cast<double>(test.size());
  return r;
}

}  // namespace fedmpq
