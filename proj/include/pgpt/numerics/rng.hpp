// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace pgpt {

/// Philox4x32-10 counter-based generator (Salmon et al., "Parallel random
/// numbers: as easy as 1, 2, 3"). The output is a pure function of
/// (key, counter), so identical seeds produce identical streams on every
/// platform. `stream` selects an independent substream through the upper
/// counter words.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Block generate(Block counter, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t{kMul0} * counter[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * counter[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      counter = {hi1 ^ counter[1] ^ key[0], lo1, hi0 ^ counter[3] ^ key[1], lo0};
    }
    return counter;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// Serializable generator position.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t counter = 0;
  std::uint32_t lane = 4;

  friend bool operator==(const RngState&, const RngState&) = default;
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) {
    state_.seed = seed;
    state_.stream = stream;
  }
  explicit Rng(const RngState& state) : state_(state) {
    if (state_.lane < 4) {
      block_ = compute(state_.counter - 1);
    }
  }

  const RngState& state() const { return state_; }
  std::uint64_t seed() const { return state_.seed; }

  /// Independent generator derived from this one's seed.
  Rng fork(std::uint64_t stream) const {
    return Rng(state_.seed, state_.stream * 0x9E3779B97F4A7C15ull + stream + 1);
  }

  std::uint32_t next_u32() {
    if (state_.lane >= 4) {
      block_ = compute(state_.counter);
      ++state_.counter;
      state_.lane = 0;
    }
    return block_[state_.lane++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling keeps the result unbiased.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Standard normal via Box-Muller (one value per call, no caching, so the
  /// draw count stays a simple function of the call count).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  Philox4x32::Block compute(std::uint64_t counter) const {
    const Philox4x32::Block ctr = {
        static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
        static_cast<std::uint32_t>(state_.stream), static_cast<std::uint32_t>(state_.stream >> 32)};
    const Philox4x32::Key key = {static_cast<std::uint32_t>(state_.seed),
                                 static_cast<std::uint32_t>(state_.seed >> 32)};
    return Philox4x32::generate(ctr, key);
  }

  RngState state_;
  Philox4x32::Block block_{};
};

}  // namespace pgpt
