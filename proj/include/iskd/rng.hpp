#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace iskd {

/// Seeded generator with a portable draw sequence.
///
/// The bit stream is std::mt19937_64, whose output is fully specified by the
/// C++ standard. Distributions are implemented here rather than taken from
/// <random>, because the standard leaves those implementation-defined.
class SeededRng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64/box-muller/v1";

  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

  /// Fisher-Yates shuffle driven by below().
  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finalizer over (seed, stream); used to give independent
/// streams (init, shuffle, per-epoch permutations) their own seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

}  // namespace iskd
