#pragma once

// Seed-stable random streams. Everything that must replay identically
// across builds (punch orders, simulated answers) draws from SplitMix64
// rather than from std distributions, whose output is library-defined.

#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>

namespace punchhole {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, bound) by rejection; bound must be > 0.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % bound;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

/// Mixes a base seed with a sequence of stream coordinates (level, pass,
/// run index, ...) into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  SplitMix64 mix(seed);
  std::uint64_t out = mix.next();
  for (auto part : parts) {
    SplitMix64 step(out ^ (part * 0xD1B54A32D192ED03ULL));
    out = step.next();
  }
  return out;
}

/// Durstenfeld Fisher-Yates from the back, with SplitMix64::below draws.
template <typename T>
void shuffle(std::span<T> items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace punchhole
