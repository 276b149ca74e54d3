#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace ps {

// Deterministic RNG with implementation-independent distributions.
// std::normal_distribution and friends are not pinned by the standard,
// so all sampling goes through hand-rolled transforms of the raw stream.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  uint64_t below(uint64_t n) { return next_u64() % n; }

  double normal() {
    // Box-Muller, no cached spare
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::array<double, 3> unit_vector() {
    for (;;) {
      double x = normal(), y = normal(), z = normal();
      double n = std::sqrt(x * x + y * y + z * z);
      if (n > 1e-12) return {x / n, y / n, z / n};
    }
  }

  // Uniform random rotation via unit quaternion, row-major 3x3.
  std::array<double, 9> rotation() {
    double q0, q1, q2, q3, n;
    do {
      q0 = normal();
      q1 = normal();
      q2 = normal();
      q3 = normal();
      n = std::sqrt(q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3);
    } while (n < 1e-12);
    q0 /= n;
    q1 /= n;
    q2 /= n;
    q3 /= n;
    return {1 - 2 * (q2 * q2 + q3 * q3), 2 * (q1 * q2 - q0 * q3), 2 * (q1 * q3 + q0 * q2),
            2 * (q1 * q2 + q0 * q3),     1 - 2 * (q1 * q1 + q3 * q3), 2 * (q2 * q3 - q0 * q1),
            2 * (q1 * q3 - q0 * q2),     2 * (q2 * q3 + q0 * q1), 1 - 2 * (q1 * q1 + q2 * q2)};
  }

 private:
  uint64_t state_;
};

// Stable 64-bit FNV-1a, used for seed derivation and config hashing.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  a ^= b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2);
  return a;
}

}  // namespace ps
