// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace ckptf {

// Reflected CRC-32 (polynomial 0xEDB88320), the usual IEEE variant.
// Guards checkpoint images; catches all single-bit corruptions.
class Crc32 {
 public:
  Crc32() = default;

  void update(const void* data, size_t len) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint32_t c = state_;
    for (size_t i = 0; i < len; ++i) {
      c = table()[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    }
    state_ = c;
  }

  uint32_t value() const { return state_ ^ 0xFFFFFFFFu; }

  static uint32_t of(const void* data, size_t len) {
    Crc32 c;
    c.update(data, len);
    return c.value();
  }

 private:
  static const std::array<uint32_t, 256>& table() {
    static const std::array<uint32_t, 256> t = [] {
      std::array<uint32_t, 256> tab{};
      for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) {
          c = (c & 1) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
        }
        tab[i] = c;
      }
      return tab;
    }();
    return t;
  }

  uint32_t state_ = 0xFFFFFFFFu;
};

}  // namespace ckptf
