// Copyright 2026 The mddr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Counter-based random streams (Philox4x32-10, Salmon et al. SC'11).
//
// Every random quantity in the library is drawn from a stream addressed by a
// key derived from the user seed plus a tuple of tags (iteration, MCMC step,
// observation index, ...). Two draws with the same address are bit-identical
// regardless of evaluation order or thread count.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace mddr {

// SplitMix64 finalizer; used to fold tags into a stream key.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_key(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> tags) {
  std::uint64_t k = mix64(seed);
  for (auto t : tags) k = mix64(k ^ mix64(t + 0x632BE59BD9B4E019ULL));
  return k;
}

// Stream tags. Values are part of the on-disk determinism contract.
namespace tag {
inline constexpr std::uint64_t kSolverProjection = 0x11;
inline constexpr std::uint64_t kSolverInit = 0x12;
inline constexpr std::uint64_t kSolverTrace = 0x13;
inline constexpr std::uint64_t kSolver = 0x14;
inline constexpr std::uint64_t kLikelihood = 0x21;
inline constexpr std::uint64_t kProposal = 0x31;
inline constexpr std::uint64_t kPhiPhase = 0x32;
inline constexpr std::uint64_t kOmegaPhase = 0x33;
inline constexpr std::uint64_t kInit = 0x34;
inline constexpr std::uint64_t kEvaluation = 0x41;
inline constexpr std::uint64_t kSimulation = 0x51;
inline constexpr std::uint64_t kSplit = 0x52;
}  // namespace tag

class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit Philox4x32(std::uint64_t key)
      : key_{static_cast<std::uint32_t>(key),
             static_cast<std::uint32_t>(key >> 32)} {}

  // Pure function of (key, counter).
  Block operator()(std::uint64_t counter) const {
    Block ctr{static_cast<std::uint32_t>(counter),
              static_cast<std::uint32_t>(counter >> 32), 0x5851F42DU,
              0x4C957F2DU};
    std::array<std::uint32_t, 2> key = key_;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53U;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57U;
  static constexpr std::uint32_t kW0 = 0x9E3779B9U;
  static constexpr std::uint32_t kW1 = 0xBB67AE85U;
  std::array<std::uint32_t, 2> key_;
};

// Sequential view of one Philox stream.
class Stream {
 public:
  explicit Stream(std::uint64_t key) : gen_(key) {}
  Stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags)
      : gen_(derive_key(seed, tags)) {}

  std::uint32_t next_u32() {
    if (pos_ == 4) {
      buf_ = gen_(counter_++);
      pos_ = 0;
    }
    return buf_[pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1].
  double uniform_pos() { return 1.0 - uniform(); }

  // Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) %
           n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
    const double a = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double exponential() { return -std::log(uniform_pos()); }

  // Laplace(0, scale) as a signed exponential.
  double laplace(double scale) {
    const double sign = (next_u32() & 1U) ? 1.0 : -1.0;
    return sign * scale * exponential();
  }

 private:
  Philox4x32 gen_;
  std::uint64_t counter_ = 0;
  Philox4x32::Block buf_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mddr
