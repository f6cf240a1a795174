// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace ckptf {

using Bytes = std::vector<uint8_t>;

// Little-endian append/read helpers. Every on-disk and on-wire integer
// in this project goes through these.
class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v) { le(v, 2); }
  void u24(uint32_t v) { le(v, 3); }
  void u32(uint32_t v) { le(v, 4); }
  void u64(uint64_t v) { le(v, 8); }

  void raw(const void* data, size_t len) {
    const auto* p = static_cast<const uint8_t*>(data);
    out_.insert(out_.end(), p, p + len);
  }
  void bytes(const Bytes& b) { raw(b.data(), b.size()); }
  void str(const std::string& s) { raw(s.data(), s.size()); }
  void len_str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    str(s);
  }
  void len_bytes(const Bytes& b) {
    u32(static_cast<uint32_t>(b.size()));
    bytes(b);
  }

 private:
  void le(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  Bytes& out_;
};

struct TruncatedInput : std::runtime_error {
  TruncatedInput() : std::runtime_error("truncated input") {}
};

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t len) : p_(data), end_(data + len) {}
  explicit ByteReader(const Bytes& b) : ByteReader(b.data(), b.size()) {}

  uint8_t u8() { return static_cast<uint8_t>(le(1)); }
  uint16_t u16() { return static_cast<uint16_t>(le(2)); }
  uint32_t u24() { return static_cast<uint32_t>(le(3)); }
  uint32_t u32() { return static_cast<uint32_t>(le(4)); }
  uint64_t u64() { return le(8); }

  Bytes bytes(size_t n) {
    need(n);
    Bytes out(p_, p_ + n);
    p_ += n;
    return out;
  }
  std::string str(size_t n) {
    need(n);
    std::string out(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return out;
  }
  std::string len_str() { return str(u32()); }
  Bytes len_bytes() { return bytes(u32()); }

  size_t remaining() const { return static_cast<size_t>(end_ - p_); }
  Bytes rest() { return bytes(remaining()); }
  std::string rest_str() { return str(remaining()); }

 private:
  void need(size_t n) const {
    if (remaining() < n) throw TruncatedInput{};
  }
  uint64_t le(int n) {
    need(static_cast<size_t>(n));
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(p_[i]) << (8 * i);
    p_ += n;
    return v;
  }
  const uint8_t* p_;
  const uint8_t* end_;
};

}  // namespace ckptf
