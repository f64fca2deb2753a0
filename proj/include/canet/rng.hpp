#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace canet {

// Seeded RNG with hand-rolled value mappings, so sequences do not depend on
// the standard library's distribution internals (the mt19937_64 engine itself
// is fully specified). Reproducible across platforms and builds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second draw of each pair is cached.
  double gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  double gaussian(double mean, double std) { return mean + std * gaussian(); }

  // Uniform integer in [0, n), unbiased via rejection.
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t x, r;
    do {
      x = engine_();
      r = x % n;
    } while (x - r > std::uint64_t(0) - n);
    return r;
  }

  // Fisher-Yates; identical result on any conforming platform.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  // Independent stream derived from the same base seed.
  Rng derive(std::uint64_t stream) const { return Rng(mix(seed_, stream)); }

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the (seed, stream) pair
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

// Stream ids for RNGs derived from one experiment seed, so changing one
// consumer (say, epoch count) never shifts another (initialization).
inline constexpr std::uint64_t kInitStream = 0x11;
inline constexpr std::uint64_t kShuffleStream = 0x22;
inline constexpr std::uint64_t kSplitStream = 0x33;

}  // namespace canet
