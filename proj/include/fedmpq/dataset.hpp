// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Synthetic label-skewed federations: a Gaussian mixture with one component
// per class, client label mixes drawn from a symmetric Dirichlet, and a small
// server-side public set whose label mix can be pushed away from the global
// one.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedmpq/error.hpp"
#include "fedmpq/seed.hpp"

namespace fedmpq {

struct Dataset {
  std::size_t dim = 0;
  std::vector<float> x;          // size() x dim, row-major
  std::vector<std::uint32_t> y;  // class labels

  [[nodiscard]] std::size_t size() const { return y.size(); }
  [[nodiscard]] bool empty() const { return y.empty(); }
  [[nodiscard]] std::span<const float> row(std::size_t i) const {
    return {x.data() + i * dim, dim};
  }
  void push(std::span<const float> features, std::uint32_t label) {
    x.insert(x.end(), features.begin(), features.end());
    y.push_back(label);
  }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct FederationConfig {
  std::size_t n_clients = 100;
  std::size_t classes = 10;
  std::size_t dim = 20;
  std::size_t samples_per_client = 21;
  double alpha = 0.3;
  std::size_t public_size = 20;
  double public_mismatch = 0.8;  // 0: global label mix, 1: all class 0
  std::size_t test_size = 2000;
  double class_sep = 3.0;
  std::uint64_t seed = 1;
  friend bool operator==(const FederationConfig&, const FederationConfig&) = default;
};

struct FederationData {
  std::vector<Dataset> clients;
  Dataset public_set;
  Dataset test_set;
  double alpha = 0.0;
  std::vector<std::vector<double>> client_label_mix;
  std::vector<double> public_label_mix;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<double> sample_dirichlet(std::mt19937_64& rng, std::size_t k, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (auto& v : p) {
    v = gamma(rng);
    total += v;
  }
  if (!(total > 0.0)) {
    // Every draw underflowed (alpha extremely small): all mass on one class.
    std::fill(p.begin(), p.end(), 0.0);
    p[rng() % k] = 1.0;
    return p;
  }
  for (auto& v : p) v /= total;
  return p;
}

inline std::uint32_t sample_categorical(std::mt19937_64& rng, const std::vector<double>& p) {
  double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  for (std::size_t c = 0; c + 1 < p.size(); ++c) {
    if (u < p[c]) return static_cast<std::uint32_t>(c);
    u -= p[c];
  }
  return static_cast<std::uint32_t>(p.size() - 1);
}

}  // namespace detail

inline FederationData gen_synthetic_federation(const FederationConfig& cfg) {
  if (cfg.n_clients < 1 || cfg.classes < 1 || cfg.dim < 1 || cfg.samples_per_client < 1 ||
      cfg.public_size < 1 || cfg.test_size < 1) {
    throw ConfigError("federation: all counts must be at least 1");
  }
  if (!(cfg.alpha > 0.0)) throw ConfigError("federation: Dirichlet alpha must be positive");
  if (cfg.public_mismatch < 0.0 || cfg.public_mismatch > 1.0) {
    throw ConfigError("federation: public_mismatch must lie in [0, 1]");
  }

  FederationData fed;
  fed.alpha = cfg.alpha;
  if (cfg.classes > cfg.dim + 1) {
    fed.warnings.push_back("federation: more classes than dim+1; class means cannot be "
                           "mutually well separated");
  }

  const std::size_t d = cfg.dim;
  std::mt19937_64 mean_rng(derive_seed(cfg.seed, Stream::data, {0}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = cfg.class_sep / std::sqrt(static_cast<double>(d));
  std::vector<double> means(cfg.classes * d);
  for (auto& m : means) m = scale * normal(mean_rng);

  auto draw = [&](std::mt19937_64& rng, std::uint32_t label, Dataset& out) {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<float> row(d);
    for (std::size_t j = 0; j < d; ++j) {
      row[j] = static_cast<float>(means[label * d + j] + noise(rng));
    }
    out.push(row, label);
  };

  fed.clients.resize(cfg.n_clients);
  fed.client_label_mix.resize(cfg.n_clients);
  for (std::size_t i = 0; i < cfg.n_clients; ++i) {
    std::mt19937_64 rng(derive_seed(cfg.seed, Stream::data, {1, i}));
    fed.client_label_mix[i] = detail::sample_dirichlet(rng, cfg.classes, cfg.alpha);
    Dataset& ds = fed.clients[i];
    ds.dim = d;
    for (std::size_t s = 0; s < cfg.samples_per_client; ++s) {
      draw(rng, detail::sample_categorical(rng, fed.client_label_mix[i]), ds);
    }
  }

  fed.public_label_mix.assign(cfg.classes, (1.0 - cfg.public_mismatch) / static_cast<double>(cfg.classes));
  fed.public_label_mix[0] += cfg.public_mismatch;
  {
    std::mt19937_64 rng(derive_seed(cfg.seed, Stream::data, {2}));
    fed.public_set.dim = d;
    for (std::size_t s = 0; s < cfg.public_size; ++s) {
      draw(rng, detail::sample_categorical(rng, fed.public_label_mix), fed.public_set);
    }
  }
  {
    std::mt19937_64 rng(derive_seed(cfg.seed, Stream::data, {3}));
    fed.test_set.dim = d;
    for (std::size_t s = 0; s < cfg.test_size; ++s) {
      draw(rng, static_cast<std::uint32_t>(s % cfg.classes), fed.test_set);
    }
  }
  return fed;
}

/// CSV snapshot: one row per sample, `label,f0,f1,...`, floats written with
/// enough digits to round-trip exactly.
inline void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<float>::max_digits10);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.y[i];
    for (float v : ds.row(i)) out << ',' << v;
    out << '\n';
  }
}

inline Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  Dataset ds;
  std::string line;
  std::vector<float> row;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    const auto label = static_cast<std::uint32_t>(std::stoul(cell));
    row.clear();
    while (std::getline(ss, cell, ',')) row.push_back(std::stof(cell));
    if (ds.empty()) ds.dim = row.size();
    if (row.size() != ds.dim) throw CorruptData("ragged dataset row in " + path.string());
    ds.push(row, label);
  }
  return ds;
}

/// Writes clients/NNNN.csv, public.csv and test.csv under `dir`.
inline void save_federation(const FederationData& fed, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "clients");
  for (std::size_t i = 0; i < fed.clients.size(); ++i) {
    std::ostringstream name;
    name << std::setw(4) << std::setfill('0') << i << ".csv";
    write_dataset_csv(fed.clients[i], dir / "clients" / name.str());
  }
  write_dataset_csv(fed.public_set, dir / "public.csv");
  write_dataset_csv(fed.test_set, dir / "test.csv");
}

}  // namespace fedmpq
