#pragma once

#include <cstdint>
#include <initializer_list>

namespace disco {

// SplitMix64 finalizer. Fixed by algorithm so every port reproduces the same
// integer streams.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Derives an independent key from a parent key and a list of tags
// (client id, round, layer index, ...).
constexpr std::uint64_t derive_key(std::uint64_t key,
                                   std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t k = mix64(key);
  for (std::uint64_t t : tags) k = mix64(k ^ mix64(t + 0x632BE59BD9B4E019ULL));
  return k;
}

// Counter-based generator: draw i is mix64(key + i * golden), so any position
// in the stream can be addressed directly.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t at(std::uint64_t i) const noexcept {
    return mix64(key_ + i * 0x9E3779B97F4A7C15ULL);
  }

  std::uint64_t next_u64() noexcept { return at(counter_++); }

  // [0, 1) with 53 random mantissa bits.
  double next_unit() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // (0, 1], safe for log().
  double next_unit_open_low() noexcept {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * next_unit();
  }

  // Unbiased integer in [0, n) by rejection; n must be > 0.
  std::uint64_t next_below(std::uint64_t n) noexcept;

  // Standard normal via Box-Muller; both halves of each pair are used.
  double next_normal() noexcept;

  // Gamma(shape, 1) by Marsaglia-Tsang.
  double next_gamma(double shape) noexcept;

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace disco
