#ifndef HSFUSE_RNG_HPP
#define HSFUSE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace hsfuse {

/// Portable seeded generator.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Distributions are implemented here rather than taken from
/// <random> because the standard library distributions are not required to be
/// reproducible across implementations:
///   - uniform(): top 53 bits of one engine draw scaled by 2^-53, in [0, 1).
///   - below(n): rejection sampling on the full 64-bit draw (no modulo bias).
///   - normal(): Marsaglia polar method on pairs of uniform() draws in (-1, 1),
///     caching the second deviate.
class Rng {
 public:
  static constexpr const char* kIdentity = "mt19937_64+polar-normal/v1";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t below(std::uint64_t n)
  {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  double normal()
  {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0.0, v = 0.0, s = 0.0;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Fisher-Yates shuffle of the first k positions (k = size for a full shuffle).
  template <typename T>
  void partial_shuffle(std::vector<T>& v, std::size_t k)
  {
    const std::size_t n = v.size();
    for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(v[i], v[j]);
    }
  }

  /// Independent sub-stream seed: splitmix64 finalizer of seed + stream.
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
  {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hsfuse

#endif  // HSFUSE_RNG_HPP
