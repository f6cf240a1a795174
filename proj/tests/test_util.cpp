// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include "ckptf/bytes.hpp"
#include "ckptf/crc32.hpp"
#include "ckptf/rng.hpp"

using namespace ckptf;

TEST_CASE("crc32 known answer") {
  // The classic check value for this polynomial.
  CHECK(Crc32::of("123456789", 9) == 0xCBF43926u);
  CHECK(Crc32::of("", 0) == 0x00000000u);
}

TEST_CASE("crc32 detects any single-bit flip") {
  SplitMix64 g(7);
  Bytes data(257);
  for (auto& b : data) b = static_cast<uint8_t>(g.next());
  uint32_t clean = Crc32::of(data.data(), data.size());
  for (int trial = 0; trial < 64; ++trial) {
    size_t bit = g.below(data.size() * 8);
    data[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
    CHECK(Crc32::of(data.data(), data.size()) != clean);
    data[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
  }
}

TEST_CASE("splitmix64 streams are stable and replayable") {
  SplitMix64 a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  SplitMix64 c(43);
  CHECK(SplitMix64(42).next() != c.next());
  CHECK(substream_seed(42, 1) != substream_seed(42, 2));
}

TEST_CASE("byte writer and reader round-trip little-endian fields") {
  Bytes buf;
  ByteWriter w(buf);
  w.u8(0xAB);
  w.u16(0x1234);
  w.u24(0xABCDEF);
  w.u32(0xDEADBEEF);
  w.u64(0x0102030405060708ull);
  w.len_str("hi");

  // Spot-check the layout is little-endian.
  CHECK(buf[0] == 0xAB);
  CHECK(buf[1] == 0x34);
  CHECK(buf[2] == 0x12);
  CHECK(buf[3] == 0xEF);
  CHECK(buf[4] == 0xCD);
  CHECK(buf[5] == 0xAB);

  ByteReader r(buf);
  CHECK(r.u8() == 0xAB);
  CHECK(r.u16() == 0x1234);
  CHECK(r.u24() == 0xABCDEF);
  CHECK(r.u32() == 0xDEADBEEF);
  CHECK(r.u64() == 0x0102030405060708ull);
  CHECK(r.len_str() == "hi");
  CHECK(r.remaining() == 0);
  CHECK_THROWS_AS(r.u8(), TruncatedInput);
}
