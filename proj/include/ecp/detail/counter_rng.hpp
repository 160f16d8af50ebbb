#pragma once

#include <cmath>
#include <cstdint>

namespace ecp::detail {

// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based stream: the i-th draw depends only on (key, i), so any
// consumer can reproduce a given draw without replaying earlier ones.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(mix64(seed ^ mix64(stream + 0xD1B54A32D192ED03ULL))) {}

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix64(key_ + mix64(counter));
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform(std::uint64_t counter) const noexcept {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  // Unbiased integer in [0, bound) by rejection on the top of the range.
  std::uint64_t below(std::uint64_t counter, std::uint64_t bound) const noexcept {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    for (std::uint64_t attempt = 0;; ++attempt) {
      const std::uint64_t v = mix64(bits(counter) + attempt * 0x9E3779B97F4A7C15ULL);
      if (v < limit) return v % bound;
    }
  }

 private:
  std::uint64_t key_;
};

}  // namespace ecp::detail
