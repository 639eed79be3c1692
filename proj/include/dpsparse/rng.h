// Copyright 2026 The dpsparse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPSPARSE_RNG_H_
#define DPSPARSE_RNG_H_

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace dpsparse {

// Well-known stream identifiers. Every consumer of randomness within a run
// draws from its own stream so that, e.g., the number of noise draws never
// perturbs batch sampling.
enum class RngStream : uint64_t {
  kInit = 1,
  kSampler = 2,
  kNoise = 3,
  kMask = 4,
  kData = 5,
  kPretrain = 6,
  kHead = 7,
  kScoring = 8,
  kSelection = 9,
};

// Counter-based generator: output i of stream s under key k is a pure
// function of (k, s, i). Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = uint64_t;

  CounterRng() = default;
  CounterRng(uint64_t key, uint64_t stream) : key_(key), stream_(stream) {}
  CounterRng(uint64_t key, RngStream stream)
      : CounterRng(key, static_cast<uint64_t>(stream)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() { return Mix(key_, stream_, counter_++); }

  // Uniform double in [0, 1) with 53 random bits.
  double Uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; both outputs are used.
  double Gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = Uniform();
    while (u1 <= 0.0) u1 = Uniform();
    const double u2 = Uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // Uniform integer in [0, bound) by rejection.
  uint64_t Below(uint64_t bound) {
    if (bound <= 1) return 0;
    const uint64_t limit = max() - max() % bound;
    uint64_t r = (*this)();
    while (r >= limit) r = (*this)();
    return r % bound;
  }

  uint64_t counter() const { return counter_; }
  uint64_t key() const { return key_; }
  uint64_t stream() const { return stream_; }

  bool operator==(const CounterRng&) const = default;

 private:
  static uint64_t SplitMix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static uint64_t Mix(uint64_t key, uint64_t stream, uint64_t counter) {
    return SplitMix(SplitMix(SplitMix(key) ^ stream) ^ counter);
  }

  uint64_t key_ = 0;
  uint64_t stream_ = 0;
  uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dpsparse

#endif  // DPSPARSE_RNG_H_
