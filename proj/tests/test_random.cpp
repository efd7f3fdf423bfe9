#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "iirc/random.hpp"

using namespace iirc;

namespace {

// Reference xoshiro256** / SplitMix64, written out separately from the library.
struct RefXoshiro {
  std::uint64_t s[4];
  explicit RefXoshiro(std::uint64_t seed) {
    for (auto& word : s) {
      seed += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = seed;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      word = z ^ (z >> 31);
    }
  }
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t next() {
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }
};

}  // namespace

TEST_CASE("generator matches a reference xoshiro256**") {
  for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 0xdeadbeefULL}) {
    Rng rng(seed);
    RefXoshiro ref(seed);
    for (int i = 0; i < 1000; ++i) REQUIRE(rng() == ref.next());
  }
}

TEST_CASE("derive_seed separates purposes and indices") {
  CHECK(derive_seed(7, "split", 0) == derive_seed(7, "split", 0));
  CHECK(derive_seed(7, "split", 0) != derive_seed(7, "split", 1));
  CHECK(derive_seed(7, "split", 0) != derive_seed(7, "assign", 0));
  CHECK(derive_seed(7, "split", 0) != derive_seed(8, "split", 0));
  static_assert(fnv1a64("") == 0xcbf29ce484222325ULL);
  static_assert(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("uniform and normal moments") {
  Rng rng(3);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("below stays in range and is roughly uniform") {
  Rng rng(11);
  std::array<int, 7> counts{};
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    const auto v = rng.below(7);
    REQUIRE(v < 7);
    ++counts[v];
  }
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
  CHECK(chi2 < 22.5);  // 6 dof, p ~ 0.001
}

TEST_CASE("shuffle is a permutation and hits every ordering of three") {
  Rng rng(5);
  std::map<std::array<int, 3>, int> seen;
  for (int i = 0; i < 6000; ++i) {
    std::array<int, 3> v{0, 1, 2};
    shuffle(std::span<int>(v), rng);
    ++seen[v];
  }
  REQUIRE(seen.size() == 6);
  for (const auto& [perm, count] : seen) CHECK(std::abs(count - 1000) < 150);

  std::vector<int> big(100);
  std::iota(big.begin(), big.end(), 0);
  Rng r2(9);
  shuffle(std::span(big), r2);
  auto sorted = big;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) CHECK(sorted[i] == i);
}
