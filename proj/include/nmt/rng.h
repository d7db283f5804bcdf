#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace nmt {

// Counter-based SplitMix64 generator.
//
// The i-th draw (i = 0, 1, ...) for a given seed is
//
//   x = seed + (i + 1) * 0x9E3779B97F4A7C15        (mod 2^64)
//   x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9
//   x = (x ^ (x >> 27)) * 0x94D049BB133111EB
//   out = x ^ (x >> 31)
//
// uniform() maps a draw to [0, 1) as (out >> 11) * 2^-53. below(n) uses
// rejection sampling on draws so results are unbiased and portable.
// Any implementation of the same formulas reproduces the same streams,
// which keeps dropout masks and shuffles comparable across builds.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t x = seed + (index + 1) * 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  std::uint64_t next() { return mix(seed_, counter_++); }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next();
    while (x >= limit) x = next();
    return x % n;
  }

  // Independent stream derived from this one, e.g. one per worker or per
  // parameter tensor.
  CounterRng split(std::uint64_t stream) const { return CounterRng(mix(seed_ ^ 0xD1B54A32D192ED03ULL, stream)); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  template <typename Item>
  void shuffle(std::vector<Item>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace nmt
