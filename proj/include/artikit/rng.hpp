#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace artikit {

// Deterministic random stream. mt19937_64 gives a portable bit sequence, but
// the std <random> distributions are implementation-defined, so uniform and
// normal draws are derived by hand here; equal seeds give bitwise-equal
// doubles on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Multiply-shift map; the O(n/2^64) bias is
  // irrelevant next to the determinism it buys.
  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(engine_()) * n) >> 64);
  }

  // Standard normal via Box-Muller (cosine branch only; two uniforms per
  // draw keeps the stream position independent of call history).
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Identity-or-random permutation of [0, n).
  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    shuffle(p);
    return p;
  }

 private:
  std::mt19937_64 engine_;
};

// Cheap stateless mixer for deriving independent stream seeds from a base
// seed plus a lane index (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t lane) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (lane + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace artikit
