#pragma once

// Seeded randomness shared by every module.
//
// All streams come from one run seed through derive_seed(seed, purpose, index),
// so each consumer (a class shuffle, a task configuration, a minibatch order)
// owns an independent, reproducible generator. The generator is xoshiro256**
// seeded through SplitMix64; normals use the Box-Muller cosine branch and
// consume exactly two uniforms each. Nothing here depends on <random>
// distributions, whose output is implementation-defined.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace iirc {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a over the bytes of `text`.
constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// hash64(seed, purpose, index): the only way seeds are derived.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose,
                                    std::uint64_t index) noexcept {
  return mix64(seed ^ mix64(fnv1a64(purpose) ^ mix64(index)));
}

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept;

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Standard normal, Box-Muller: sqrt(-2 ln(1 - u1)) * cos(2 pi u2).
  double normal() noexcept;
  /// Unbiased integer in [0, bound); bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;

 private:
  std::uint64_t s_[4];
};

/// Fisher-Yates from the back: for i = n-1 .. 1 swap(i, below(i+1)).
template <class T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace iirc
