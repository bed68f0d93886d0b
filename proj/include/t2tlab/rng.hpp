#pragma once

#include <cstdint>
#include <random>
#include <utility>

namespace t2t {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic RNG. The mt19937_64 engine is fully specified by the
// standard; the helpers below replace std::uniform_*_distribution, whose
// output is implementation-defined and would break cross-toolchain
// reproducibility of data pipelines.
class Rng {
public:
  explicit Rng(uint64_t seed) : seed_(seed), eng_(splitmix64(seed)) {}

  // Independent child stream, e.g. one per example index or per epoch.
  Rng derive(uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ (0x632be59bd9b4e019ull * (stream + 0x9e3779b97f4a7c15ull))));
  }
  Rng derive(uint64_t a, uint64_t b) const { return derive(a).derive(b); }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return eng_(); }

  // [0, 1), 53-bit resolution
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, n)
  uint64_t below(uint64_t n) {
    if (n <= 1) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Inclusive range
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + int64_t(below(uint64_t(hi - lo + 1)));
  }

  template <class V>
  void shuffle(V& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace t2t
