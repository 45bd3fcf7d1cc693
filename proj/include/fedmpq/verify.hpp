// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Randomized oracle suites. Each reference result is computed by a separate,
// deliberately naive routine; the library is only used to produce inputs and
// the result under test. The `verify` subcommand and the acceptance gate run
// these.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fedmpq/bytes.hpp"
#include "fedmpq/codebook_service.hpp"
#include "fedmpq/model.hpp"
#include "fedmpq/packet.hpp"
#include "fedmpq/pq_codec.hpp"
#include "fedmpq/secure_agg.hpp"

namespace fedmpq::verify {

struct SuiteResult {
  std::string name;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest observed error measure
  double seconds = 0.0;
  std::string first_failure;

  [[nodiscard]] bool passed() const { return failures == 0 && trials > 0; }
};

namespace detail {

class Timer {
 public:
  [[nodiscard]] double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline void fail(SuiteResult& r, std::size_t trial, const std::string& what) {
  if (r.failures++ == 0) r.first_failure = "trial " + std::to_string(trial) + ": " + what;
}

// Dyadic values (multiples of 1/8 in [-4, 4]) keep every sum exact in double.
inline float draw_value(std::mt19937_64& rng, bool dyadic, double scale) {
  if (dyadic) return static_cast<float>(static_cast<int>(uniform_int(rng, 0, 64)) - 32) / 8.0f;
  return static_cast<float>(std::normal_distribution<double>(0.0, scale)(rng));
}

inline Codebook random_codebook(std::mt19937_64& rng, std::size_t k, std::size_t d, bool dyadic, double scale,
                                int index) {
  std::vector<float> data(k * d);
  for (auto& v : data) v = dyadic ? static_cast<float>(static_cast<int>(uniform_int(rng, 0, 8)) - 4)
                                  : draw_value(rng, false, scale);
  Codebook cb = enforce_zero_codeword(Codebook(k, d, std::move(data)));
  cb.set_index(index);
  return cb;
}

// Plain per-element reconstruction: codeword value or 0 past the end, plus the
// residual entry if one exists at that position.
inline std::vector<double> naive_reconstruct(const PqLayerUpdate& u, const Codebook& cb, std::size_t length) {
  std::vector<double> out(length, 0.0);
  const std::size_t d = cb.dim();
  for (std::size_t i = 0; i < length; ++i) {
    const std::uint32_t code = u.code.codes[i / d];
    out[i] = cb.data()[code * d + i % d];
  }
  for (const auto& e : u.residual.entries) out[e.position] += e.value;
  return out;
}

struct AggregationCheck {
  double rel_error = 0.0;
  bool counts_exact = true;
  bool bitwise_equal = true;
};

// One random session: clients encode, the aggregator folds serialized packets,
// and the finalized mean is compared with the naive reconstruct-then-average.
inline AggregationCheck check_aggregation(std::mt19937_64& rng, std::size_t max_clients, std::size_t max_len,
                                          std::size_t max_m, bool dyadic) {
  const std::size_t n_clients = uniform_int(rng, 1, max_clients);
  const std::size_t n_layers = uniform_int(rng, 1, 3);
  PacketSchema schema;
  std::vector<CodebookSet> sets;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t m = uniform_int(rng, 1, max_m);
    const std::size_t k = std::size_t{1} << uniform_int(rng, 1, 6);
    const std::size_t d = uniform_int(rng, 1, 8);
    schema.push_back({uniform_int(rng, 1, max_len), m, k, d});
    CodebookSet set;
    set.layer_id = static_cast<int>(l);
    for (std::size_t n = 0; n < m; ++n) {
      set.codebooks.push_back(random_codebook(rng, k, d, dyadic, 1.0, static_cast<int>(n)));
    }
    sets.push_back(std::move(set));
  }
  const double rho = std::uniform_real_distribution<double>(0.0, 0.2)(rng);

  SecureAggregator agg(schema);
  std::vector<std::vector<double>> naive_sum(n_layers);
  std::vector<std::vector<std::vector<std::uint32_t>>> naive_counts(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    naive_sum[l].assign(schema[l].length, 0.0);
    naive_counts[l].assign(schema[l].m, std::vector<std::uint32_t>(
                                            num_subvectors(schema[l].length, schema[l].d) * schema[l].k, 0));
  }
  for (std::size_t c = 0; c < n_clients; ++c) {
    ClientUpdatePacket p{static_cast<std::uint32_t>(c), {}};
    for (std::size_t l = 0; l < n_layers; ++l) {
      Vector z(schema[l].length);
      for (auto& v : z) v = draw_value(rng, dyadic, 1.0);
      PqLayerUpdate u = encode_layer(z, sets[l].codebooks, rho, 0.99).update;
      const Codebook& cb = sets[l].codebooks[static_cast<std::size_t>(u.code.codebook_index)];
      const auto rec = naive_reconstruct(u, cb, schema[l].length);
      for (std::size_t i = 0; i < rec.size(); ++i) naive_sum[l][i] += rec[i];
      for (std::size_t row = 0; row < u.code.codes.size(); ++row) {
        ++naive_counts[l][static_cast<std::size_t>(u.code.codebook_index)][row * schema[l].k + u.code.codes[row]];
      }
      p.layers.push_back(std::move(u));
    }
    agg.submit(serialize_packet(p, schema));
  }
  const CompressedAggregate sealed = std::move(agg).seal();
  const auto g = finalize(sealed, sets);

  AggregationCheck out;
  double diff2 = 0.0;
  double ref2 = 0.0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (sealed.layers[l].counts != naive_counts[l]) out.counts_exact = false;
    for (std::size_t i = 0; i < schema[l].length; ++i) {
      const double ref = naive_sum[l][i] / static_cast<double>(n_clients);
      const double got = g[l][i];
      diff2 += (got - ref) * (got - ref);
      ref2 += ref * ref;
      if (got != static_cast<double>(static_cast<float>(ref))) out.bitwise_equal = false;
    }
  }
  out.rel_error = ref2 > 0.0 ? std::sqrt(diff2 / ref2) : std::sqrt(diff2);
  return out;
}

// Byte-oriented writer with a 64-bit accumulator.
inline Bytes accumulator_pack(const std::vector<std::uint32_t>& values, unsigned bits) {
  Bytes out;
  std::uint64_t acc = 0;
  unsigned filled = 0;
  for (std::uint32_t v : values) {
    acc |= static_cast<std::uint64_t>(v) << filled;
    filled += bits;
    while (filled >= 8) {
      out.push_back(static_cast<std::uint8_t>(acc & 0xFF));
      acc >>= 8;
      filled -= 8;
    }
  }
  if (filled > 0) out.push_back(static_cast<std::uint8_t>(acc & 0xFF));
  return out;
}

}  // namespace detail

/// finalize(aggregate) against the mean of naive per-client reconstructions,
/// plus exact count matrices.
inline SuiteResult exchange_identity(std::size_t trials, std::uint64_t seed, double tol = 1e-5) {
  detail::Timer t;
  SuiteResult r{"exchange identity", trials, 0, 0.0, 0.0, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto c = detail::check_aggregation(rng, 16, 512, 4, false);
    r.worst = std::max(r.worst, c.rel_error);
    if (!c.counts_exact) detail::fail(r, i, "count matrices differ");
    if (c.rel_error > tol) detail::fail(r, i, "relative error " + std::to_string(c.rel_error));
  }
  r.seconds = t.seconds();
  return r;
}

/// One-hot accumulation against reconstruct-then-average, bit for bit. Inputs
/// are dyadic so both orders of summation are exact.
inline SuiteResult onehot_oracle(std::size_t trials, std::uint64_t seed) {
  detail::Timer t;
  SuiteResult r{"one-hot accumulation oracle", trials, 0, 0.0, 0.0, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto c = detail::check_aggregation(rng, 6, 48, 3, true);
    r.worst = std::max(r.worst, c.rel_error);
    if (!c.counts_exact) detail::fail(r, i, "count matrices differ");
    if (!c.bitwise_equal) detail::fail(r, i, "mean update differs");
  }
  r.seconds = t.seconds();
  return r;
}

/// ||Q(x) - x|| <= ||x|| for zero-codeword codebooks, with and without residuals.
inline SuiteResult tau_contraction(std::size_t trials, std::uint64_t seed) {
  detail::Timer t;
  SuiteResult r{"tau contraction", trials, 0, 0.0, 0.0, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t len = detail::uniform_int(rng, 1, 256);
    const std::size_t d = detail::uniform_int(rng, 1, 8);
    const std::size_t k = std::size_t{1} << detail::uniform_int(rng, 1, 6);
    const std::size_t m = detail::uniform_int(rng, 1, 4);
    const double cb_scale = std::pow(10.0, std::uniform_real_distribution<double>(-2.0, 2.0)(rng));
    std::vector<Codebook> cbs;
    for (std::size_t n = 0; n < m; ++n) {
      cbs.push_back(detail::random_codebook(rng, k, d, false, cb_scale, static_cast<int>(n)));
    }
    Vector x(len);
    for (auto& v : x) v = detail::draw_value(rng, false, 1.0);
    const double rho = (i % 2 == 0) ? 0.0 : std::uniform_real_distribution<double>(0.0, 0.1)(rng);
    const EncodedLayer e = encode_layer(x, cbs, rho, 0.99);
    const Codebook& cb = cbs[static_cast<std::size_t>(e.update.code.codebook_index)];
    const auto q = detail::naive_reconstruct(e.update, cb, len);
    double err2 = 0.0;
    double norm2 = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      err2 += (q[j] - x[j]) * (q[j] - x[j]);
      norm2 += static_cast<double>(x[j]) * x[j];
    }
    const double tau = norm2 > 0.0 ? std::sqrt(err2 / norm2) : 0.0;
    r.worst = std::max(r.worst, tau);
    if (err2 > norm2) detail::fail(r, i, "tau " + std::to_string(tau));
  }
  r.seconds = t.seconds();
  return r;
}

/// nearest_codeword and quantize_best against exhaustive search.
inline SuiteResult argmin_oracle(std::size_t trials, std::uint64_t seed) {
  detail::Timer t;
  SuiteResult r{"argmin oracle", trials, 0, 0.0, 0.0, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t d = detail::uniform_int(rng, 1, 6);
    const std::size_t k = std::size_t{1} << detail::uniform_int(rng, 1, 5);
    const std::size_t m = detail::uniform_int(rng, 1, 4);
    const std::size_t len = detail::uniform_int(rng, 1, 40);
    const bool coarse = i % 3 == 0;  // small-integer data forces ties
    std::vector<Codebook> cbs;
    for (std::size_t n = 0; n < m; ++n) {
      cbs.push_back(detail::random_codebook(rng, k, d, coarse, 1.0, static_cast<int>(n)));
    }
    if (m > 1 && i % 5 == 0) {
      cbs[1] = cbs[0];  // identical codebooks: the lower index must win
      cbs[1].set_index(1);
    }
    Vector z(len);
    for (auto& v : z) v = coarse ? std::round(detail::draw_value(rng, true, 1.0)) : detail::draw_value(rng, false, 1.0);

    // Exhaustive: every codebook, every codeword, strict improvement only.
    const std::size_t rows = (len + d - 1) / d;
    std::size_t best_cb = 0;
    double best_err = -1.0;
    std::vector<std::uint32_t> best_codes;
    for (std::size_t n = 0; n < m; ++n) {
      std::vector<std::uint32_t> codes(rows);
      double err = 0.0;
      for (std::size_t row = 0; row < rows; ++row) {
        double best_d = -1.0;
        for (std::size_t c = 0; c < k; ++c) {
          double dist = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t pos = row * d + j;
            const double zv = pos < len ? z[pos] : 0.0;
            const double diff = zv - cbs[n].data()[c * d + j];
            dist += diff * diff;
          }
          if (best_d < 0.0 || dist < best_d) {
            best_d = dist;
            codes[row] = static_cast<std::uint32_t>(c);
          }
        }
        for (std::size_t j = 0; j < d && row * d + j < len; ++j) {
          const double diff = static_cast<double>(z[row * d + j]) - cbs[n].data()[codes[row] * d + j];
          err += diff * diff;
        }
      }
      if (best_err < 0.0 || err < best_err) {
        best_err = err;
        best_cb = n;
        best_codes = codes;
      }
    }

    const QuantizeResult q = quantize_best(z, cbs);
    if (static_cast<std::size_t>(q.code.codebook_index) != best_cb) {
      detail::fail(r, i, "codebook choice differs");
    } else if (q.code.codes != best_codes) {
      detail::fail(r, i, "codes differ");
    }
  }
  r.seconds = t.seconds();
  return r;
}

/// pack_bits/unpack_bits against an accumulator-based writer.
inline SuiteResult bitpack_oracle(std::size_t trials, std::uint64_t seed) {
  detail::Timer t;
  SuiteResult r{"bit-packing oracle", trials, 0, 0.0, 0.0, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto bits = static_cast<unsigned>(detail::uniform_int(rng, 1, 24));
    const std::size_t count = detail::uniform_int(rng, 0, 300);
    std::vector<std::uint32_t> values(count);
    for (auto& v : values) v = static_cast<std::uint32_t>(rng() & ((std::uint64_t{1} << bits) - 1));
    const Bytes packed = pack_bits(values, bits);
    if (packed != detail::accumulator_pack(values, bits)) {
      detail::fail(r, i, "packed bytes differ");
      continue;
    }
    if (unpack_bits(packed, count, bits) != values) detail::fail(r, i, "round trip differs");
  }
  r.seconds = t.seconds();
  return r;
}

/// Analytic gradients against central finite differences in double.
inline SuiteResult gradient_check(std::size_t trials, std::uint64_t seed, double tol = 1e-4) {
  detail::Timer t;
  SuiteResult r{"gradient check", trials, 0, 0.0, 0.0, {}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < trials; ++i) {
    ModelSpec spec;
    spec.kind = i % 2 == 0 ? ModelKind::logreg : ModelKind::mlp;
    spec.input_dim = detail::uniform_int(rng, 1, 6);
    spec.classes = detail::uniform_int(rng, 2, 5);
    spec.hidden = detail::uniform_int(rng, 1, 6);
    LayerVectors<double> params;
    for (const auto& l : layer_layout(spec)) {
      std::vector<double> v(l.numel());
      for (auto& x : v) x = 0.7 * normal(rng);
      params.push_back(std::move(v));
    }
    Dataset data;
    data.dim = spec.input_dim;
    const std::size_t rows = detail::uniform_int(rng, 1, 6);
    std::vector<float> row(spec.input_dim);
    for (std::size_t n = 0; n < rows; ++n) {
      for (auto& x : row) x = static_cast<float>(normal(rng));
      data.push(row, static_cast<std::uint32_t>(detail::uniform_int(rng, 0, spec.classes - 1)));
    }
    std::vector<std::uint32_t> batch(rows);
    for (std::size_t n = 0; n < rows; ++n) batch[n] = static_cast<std::uint32_t>(n);

    LayerVectors<double> grad;
    loss_and_grad<double>(spec, params, data, batch, &grad);
    const double h = 1e-6;
    double diff2 = 0.0;
    double a2 = 0.0;
    double n2 = 0.0;
    for (std::size_t l = 0; l < params.size(); ++l) {
      for (std::size_t j = 0; j < params[l].size(); ++j) {
        const double saved = params[l][j];
        params[l][j] = saved + h;
        const double up = loss_and_grad<double>(spec, params, data, batch, nullptr);
        params[l][j] = saved - h;
        const double down = loss_and_grad<double>(spec, params, data, batch, nullptr);
        params[l][j] = saved;
        const double numeric = (up - down) / (2.0 * h);
        diff2 += (numeric - grad[l][j]) * (numeric - grad[l][j]);
        a2 += grad[l][j] * grad[l][j];
        n2 += numeric * numeric;
      }
    }
    const double rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    r.worst = std::max(r.worst, rel);
    if (rel > tol) detail::fail(r, i, "relative error " + std::to_string(rel));
  }
  r.seconds = t.seconds();
  return r;
}

inline std::vector<SuiteResult> run_all(std::size_t trials, std::uint64_t seed) {
  return {exchange_identity(std::min<std::size_t>(trials, 100), seed),
          tau_contraction(trials * 10, seed + 1),
          argmin_oracle(trials, seed + 2),
          onehot_oracle(trials, seed + 3),
          bitpack_oracle(trials, seed + 4),
          gradient_check(std::min<std::size_t>(trials, 100), seed + 5)};
}

}  // namespace fedmpq::verify
