/* Copyright 2026 The Datapipe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef DATAPIPE_RANDOM_HPP_
#define DATAPIPE_RANDOM_HPP_

#include <cstdint>

namespace datapipe {

// SplitMix64 step (Steele, Lea, Flood 2014). Used to mix seeds; the exact
// constants are part of the reproducibility contract.
inline uint64_t SplitMix64Next(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t MixSeeds(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return SplitMix64Next(s);
}

// PCG-XSH-RR 64/32 (O'Neill 2014) with the reference stream constant.
// Sequences produced from a given seed are identical across platforms and
// pinned for the lifetime of the checkpoint/serialization format version.
class Pcg32 {
 public:
  explicit Pcg32(uint64_t seed) : state_(0) {
    state_ = 0;
    Next();
    state_ += seed;
    Next();
  }

  uint32_t Next() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + kStream;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  // Unbiased draw in [0, bound) via rejection sampling.
  uint32_t Bounded(uint32_t bound) {
    uint32_t threshold = (-bound) % bound;
    for (;;) {
      uint32_t r = Next();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform double in [0, 1).
  double NextDouble() { return Next() * (1.0 / 4294967296.0); }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  static constexpr uint64_t kStream = 1442695040888963407ULL;
  uint64_t state_;
};

}  // namespace datapipe

#endif  // DATAPIPE_RANDOM_HPP_
