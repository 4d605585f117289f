#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

// Deterministic randomness for every seeded operation in the project.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard, and every distribution below is hand-rolled so tests can replay a
// draw bit-for-bit from the documented recipe instead of trusting an opaque
// library distribution. The recipes, in the exact order raw engine words are
// consumed:
//
//   uniform01():      one word x; result (x >> 11) * 2^-53, in [0, 1).
//   uniform_below(n): rejection from the top: draw words until
//                     x < 2^64 - (2^64 mod n), return x % n.
//   normal():         Box-Muller. Draws u1, u2 via uniform01();
//                     r = sqrt(-2 ln(1 - u1)), phi = 2 pi u2;
//                     returns r cos(phi) and caches r sin(phi) for the next
//                     call, which consumes no words.
//   gamma(a), a>=1:   Marsaglia-Tsang. d = a - 1/3, c = 1/sqrt(9d); repeat:
//                     x = normal(), v = (1+cx)^3; reject v <= 0; u =
//                     uniform01(); accept if u < 1 - 0.0331 x^4, else if
//                     ln(u) < x^2/2 + d(1 - v + ln v); return d v.
//   gamma(a), a<1:    gamma(a+1) * (1 - uniform01())^(1/a).
//   dirichlet(a, K):  g_k = gamma(a) for k = 0..K-1 in order; w_k = g_k / sum.
//
// Sub-seeds for independent streams come from mix_seed (splitmix64 over
// seed ^ stream id), so one run seed fans out without overlapping sequences.

namespace piu {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t limit = ~0ull - (~0ull % n + 1) % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x > limit);
    return x % n;
  }

  // Inclusive bounds.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(uniform_below(
                    static_cast<std::uint64_t>(hi - lo) + 1));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    double phi = 2.0 * pi_ * u2;
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
  }

  void fill_normal(double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) p[i] = normal();
  }

  std::vector<double> normal_vec(std::size_t n) {
    std::vector<double> v(n);
    fill_normal(v.data(), n);
    return v;
  }

  double gamma(double alpha) {
    if (alpha < 1.0) {
      double u = 1.0 - uniform01();
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = uniform01();
      double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  std::vector<double> dirichlet(double alpha, int K) {
    std::vector<double> w(static_cast<std::size_t>(K));
    double sum = 0.0;
    for (auto& x : w) {
      x = gamma(alpha);
      sum += x;
    }
    for (auto& x : w) x /= sum;
    return w;
  }

 private:
  static constexpr double pi_ = 3.14159265358979323846;
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace piu
