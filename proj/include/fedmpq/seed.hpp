// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>

namespace fedmpq {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Named random streams derived from one master seed.
enum class Stream : std::uint64_t {
  data = 1,
  sampling = 2,
  client_train = 3,
  public_train = 4,
  kmeans = 5,
  shuffle = 6,
  model_init = 7,
};

/// Counter-based derivation: each (stream, indices...) tuple maps to an
/// independent 64-bit seed. Stable across platforms.
constexpr std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                    std::initializer_list<std::uint64_t> counters = {}) {
  std::uint64_t s = mix64(master ^ mix64(static_cast<std::uint64_t>(stream)));
  for (std::uint64_t c : counters) s = mix64(s ^ mix64(c + 0x632BE59BD9B4E019ull));
  return s;
}

}  // namespace fedmpq
