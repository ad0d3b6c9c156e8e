// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random streams.  The artifact must reproduce corpora and
// training runs byte-for-byte across platforms, so distribution shapes are
// implemented here instead of relying on <random>'s implementation-defined
// distributions.  Generator core is splitmix64.

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace mpo {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Unbiased integer in [0, n).  n >= 1.
  std::uint64_t bounded(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Inclusive integer range.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(bounded(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; second draw cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Stream derivation: fold string tags into a seed (FNV-1a + avalanche) so
  // independent components ("cipher", language ids, epoch numbers...) get
  // decorrelated streams from one corpus/run seed.
  static std::uint64_t mix(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = seed ^ 0xCBF29CE484222325ull;
    for (const char c : tag) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ull;
    }
    h ^= h >> 33;
    h *= 0xFF51AFD7ED558CCDull;
    h ^= h >> 33;
    h *= 0xC4CEB9FE1A85EC53ull;
    h ^= h >> 33;
    return h;
  }

  static Rng derive(std::uint64_t seed, std::initializer_list<std::string_view> tags) {
    std::uint64_t h = seed;
    for (const auto t : tags) h = mix(h, t);
    return Rng(h);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mpo
