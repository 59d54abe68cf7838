#pragma once

// xoshiro256** seeded through SplitMix64. The stream depends only on integer
// arithmetic, so a seed reproduces the same bits on every platform. Child
// streams are derived with split(), which hashes (seed, stream id) into a new
// seed; per-layer initialization and data sampling each draw from their own
// child so adding a layer never shifts another layer's samples.

#include <cmath>
#include <cstdint>
#include <numbers>

#include "bitnet/error.hpp"
#include "bitnet/tensor.hpp"

namespace bitnet {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next_u64(); }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ContractError("Rng::below(0)");
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Rng split(std::uint64_t stream) const {
    std::uint64_t sm = seed_ ^ (0xD1B54A32D192ED03ULL * (stream + 1));
    return Rng(splitmix64(sm));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// N(0, std²) samples.
template <typename T = float>
BasicMatrix<T> gaussian(std::size_t rows, std::size_t cols, double stddev,
                        Rng& rng) {
  if (rows == 0 || cols == 0)
    throw ShapeError("gaussian: zero dimension " + shape_str(rows, cols));
  BasicMatrix<T> m(rows, cols);
  for (auto& v : m.values()) v = static_cast<T>(stddev * rng.normal());
  return m;
}

// Kaiming (He) normal initialization: N(0, 2 / fan_in).
template <typename T = float>
BasicMatrix<T> gaussian_init(std::size_t rows, std::size_t cols,
                             std::size_t fan_in, Rng& rng) {
  if (rows == 0 || cols == 0)
    throw ShapeError("gaussian_init: zero dimension " + shape_str(rows, cols));
  if (fan_in == 0) throw ContractError("gaussian_init: fan_in must be > 0");
  return gaussian<T>(rows, cols, std::sqrt(2.0 / static_cast<double>(fan_in)),
                     rng);
}

}  // namespace bitnet
