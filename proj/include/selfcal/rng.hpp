/******************************************************************************
 * Copyright 2026 The selfcal Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *****************************************************************************/
#pragma once

// Deterministic random numbers. The generator is SplitMix64 (Steele, Lea &
// Flood 2014): a 64-bit counter advanced by the golden-ratio increment and
// passed through a fixed avalanche mix. It is platform independent, which
// matters because simulated streams must be bit-identical everywhere; the
// standard-library distributions are not pinned by the standard and are
// deliberately avoided.
//
// Measurement noise is keyed, not sequential: the stream for (seed, frame,
// point, purpose) is derived by hashing the key into a SplitMix64 state, so
// regenerating part of a stream (e.g. after a zoom injection) reproduces
// the untouched values exactly.

#include <cmath>
#include <cstdint>

namespace selfcal {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  /// Standard normal via Box-Muller (explicit formula, platform independent).
  double next_gaussian() {
    double u1 = next_double();
    const double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t state_;
};

/// Derives an independent stream for a composite key.
inline SplitMix64 keyed_rng(std::uint64_t seed, std::uint64_t a,
                            std::uint64_t b, std::uint64_t c) {
  SplitMix64 mixer(seed);
  std::uint64_t h = mixer.next_u64();
  h ^= a + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  SplitMix64 m2(h);
  h = m2.next_u64();
  h ^= b + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  SplitMix64 m3(h);
  h = m3.next_u64();
  h ^= c + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return SplitMix64(h);
}

}  // namespace selfcal
