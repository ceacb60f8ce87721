#pragma once

#include <algorithm>
#include <cstdint>
#include <random>

namespace ccr {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Folds several integers into one seed.
template <class... Ts>
std::uint64_t mix_seed(std::uint64_t seed, Ts... parts) {
  ((seed = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(parts) + 0x632BE59BD9B4E019ULL))), ...);
  return seed;
}

// Portable uniform draws; std::uniform_real_distribution output is library-specific.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int below(int n) { return static_cast<int>(engine_() % static_cast<std::uint64_t>(n)); }
  std::uint64_t next() { return engine_(); }
  template <class It>
  void shuffle(It first, It last) {
    for (auto n = last - first; n > 1; --n) std::iter_swap(first + (n - 1), first + below(static_cast<int>(n)));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ccr
