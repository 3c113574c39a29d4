#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace nesyrs {

/**
 * Small deterministic RNG (splitmix64) used everywhere instead of the
 * standard-library distributions, so that streams are reproducible
 * independently of the C++ runtime.
 */
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /** Uniform double in [0,1). */
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /** Uniform double in [lo,hi). */
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /** Integer in [0,n). */
  uint64_t below(uint64_t n) { return next_u64() % n; }

  /** Standard normal via Box-Muller (no state caching, fully deterministic). */
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /** Fisher-Yates shuffle of an index vector. */
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

/** FNV-1a over a string, for seed stream separation. */
inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/**
 * Derive an independent per-component seed from a global seed and a stream
 * name.  Documented seeding rule for the CLI: hash(seed, component name).
 */
inline uint64_t derive_seed(uint64_t seed, const std::string& component) {
  Rng r(seed ^ fnv1a(component));
  return r.next_u64();
}

}  // namespace nesyrs
