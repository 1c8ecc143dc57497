#pragma once

#include <array>
#include <cstdint>

namespace ff {

/// SplitMix64 finalizer: z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
/// z = (z ^ (z >> 27)) * 0x94D049BB133111EB; z ^ (z >> 31).
std::uint64_t splitmix64_mix(std::uint64_t z);

/// Seed of substream `index` under `master`:
/// splitmix64_mix(master + 0x9E3779B97F4A7C15 * (index + 1)).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// xoshiro256** (Blackman & Vigna), state filled by four successive SplitMix64
/// outputs starting from the seed. Every draw below is defined in terms of
/// next_u64() only, so streams reproduce bit-for-bit on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Top 53 bits scaled to [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n) by rejection on the top bits.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (cosine branch only, no caching).
  double normal();
  /// Normal(0, stddev) redrawn until |x| <= 2 * stddev.
  double truncated_normal(double stddev);
  bool bernoulli(double p) { return uniform() < p; }

  std::array<std::uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace ff
