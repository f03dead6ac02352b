#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace e2stn {

/// Counter-based 64-bit generator: output i of stream `key` is
/// splitmix64(key + i * golden). Splitting derives an independent key, so
/// streams can be handed to subsystems without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}
  Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (two draws per sample, no caching).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n). Rejection-sampled, unbiased.
  std::size_t below(std::size_t n);

  Rng split(std::uint64_t tag) const { return Rng(mix(key_ ^ mix(tag + 0x9e3779b97f4a7c15ULL)), 0); }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  static std::uint64_t mix(std::uint64_t z) noexcept;

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle of [0, n).
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace e2stn
