// Copyright 2026 The fedmpq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fedmpq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed wire data: bad lengths, out-of-range codes, trailing garbage.
class CorruptData : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment or codec configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Shape or schema disagreement between two otherwise valid objects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace detail
}  // namespace fedmpq
