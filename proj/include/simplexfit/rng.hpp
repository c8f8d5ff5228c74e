#ifndef SIMPLEXFIT_RNG_HPP
#define SIMPLEXFIT_RNG_HPP

#include <cstdint>
#include <random>

namespace simplexfit {

// splitmix64, used to whiten user seeds and to derive independent
// per-replicate streams from (base seed, index).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

// Deterministic across platforms: mt19937_64 output is fully specified by the
// standard and the [0,1) mapping below avoids std::uniform_real_distribution,
// whose stream is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}

  std::uint64_t next() { return eng_(); }

  // 53-bit mantissa uniform in [0, 1).
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace simplexfit

#endif
