#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace poseface {

// Deterministic 64-bit generator (splitmix64).  Every consumer derives its
// own stream from (seed, tag, index) so that samples can be produced in any
// order, or in parallel, with bitwise-identical results.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller.  Uses its own pair of uniforms per draw so
  // the stream layout stays independent of call history.
  double next_gaussian() {
    double u1 = 1.0 - next_double();  // (0, 1], keeps the log finite
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::vector<double> gaussian_vector(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = next_gaussian();
    return v;
  }

  // Uniform point on the unit sphere in R^n.
  std::vector<double> unit_vector(std::size_t n) {
    std::vector<double> v;
    double norm = 0.0;
    do {
      v = gaussian_vector(n);
      norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (auto& x : v) x /= norm;
    return v;
  }

  // Fisher-Yates shuffle of [0, n) indices.
  std::vector<std::uint32_t> permutation(std::size_t n) {
    std::vector<std::uint32_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::uint32_t>(i);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_u64() % i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::uint64_t state_;
};

// Stream derivation: hash the parts together so nearby indices give
// uncorrelated streams.
inline std::uint64_t mix_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  Rng h(seed ^ (tag * 0xD6E8FEB86659FD93ull));
  std::uint64_t a = h.next_u64();
  Rng h2(a ^ (index * 0xA5A5A5A55A5A5A5Bull));
  return h2.next_u64();
}

}  // namespace poseface
