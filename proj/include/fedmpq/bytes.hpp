// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Little-endian byte buffers and fixed-width bit packing shared by every
// wire format in the library.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "fedmpq/error.hpp"

namespace fedmpq {

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::span<const std::uint8_t> bytes) {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  }

  [[nodiscard]] std::size_t size() const { return buf_.size(); }
  [[nodiscard]] Bytes take() && { return std::move(buf_); }
  [[nodiscard]] const Bytes& bytes() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  Bytes buf_;
};

/// Bounds-checked reader; every short read throws CorruptData("corrupt packet").
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }

  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  [[nodiscard]] std::size_t remaining() const { return data_.size() - pos_; }
  [[nodiscard]] bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CorruptData("corrupt packet");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{data_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

/// Bytes needed for `count` fields of `bits` bits each, padded to a byte.
constexpr std::size_t packed_size(std::size_t count, unsigned bits) {
  return (count * bits + 7) / 8;
}

/// Packs values LSB-first into a contiguous bit stream. Bit i of the stream is
/// bit (i % 8) of byte i / 8. Values must fit in `bits` bits.
inline Bytes pack_bits(std::span<const std::uint32_t> values, unsigned bits) {
  Bytes out(packed_size(values.size(), bits), 0);
  std::size_t pos = 0;
  for (std::uint32_t v : values) {
    for (unsigned b = 0; b < bits; ++b, ++pos) {
      if ((v >> b) & 1u) out[pos / 8] |= static_cast<std::uint8_t>(1u << (pos % 8));
    }
  }
  return out;
}

/// Inverse of pack_bits. Rejects wrong lengths and nonzero padding bits so the
/// mapping is a bijection.
inline std::vector<std::uint32_t> unpack_bits(std::span<const std::uint8_t> bytes,
                                              std::size_t count, unsigned bits) {
  if (bytes.size() != packed_size(count, bits)) throw CorruptData("corrupt packet");
  std::vector<std::uint32_t> out(count, 0);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t v = 0;
    for (unsigned b = 0; b < bits; ++b, ++pos) {
      if ((bytes[pos / 8] >> (pos % 8)) & 1u) v |= 1u << b;
    }
    out[i] = v;
  }
  for (; pos < bytes.size() * 8; ++pos) {
    if ((bytes[pos / 8] >> (pos % 8)) & 1u) throw CorruptData("corrupt packet");
  }
  return out;
}

}  // namespace fedmpq
