// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace ckptf {

// SplitMix64. The stream produced for a given seed is part of the
// engine's determinism contract: test oracles replay these streams
// independently, so the generator must never change silently.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Modulo reduction; bias is irrelevant at simulation scale.
  uint64_t below(uint64_t bound) { return bound == 0 ? 0 : next() % bound; }

  // Inclusive range.
  int64_t range(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo) + 1));
  }

  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  uint64_t state_;
};

// Derives the seed of an independent substream from a run seed and a
// stream tag. Used to keep drop decisions, latency draws, and identifier
// permutations in separate replayable streams.
inline uint64_t substream_seed(uint64_t seed, uint64_t tag) {
  SplitMix64 g(seed ^ (0xa0761d6478bd642fULL * (tag + 1)));
  return g.next();
}

// One-shot mixing of two words into a well-scrambled word.
inline uint64_t mix64(uint64_t a, uint64_t b) {
  SplitMix64 g(a + 0x9e3779b97f4a7c15ULL + (b << 1));
  g.next();
  return g.next() ^ b;
}

}  // namespace ckptf
