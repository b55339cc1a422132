#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "popmech/array.hpp"

namespace popmech {

// Deterministic RNG. Distributions are hand-rolled on top of mt19937_64 so
// that streams are reproducible across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; generates pairs, caches the second.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [lo, hi] inclusive, by rejection.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    std::uint64_t span = hi - lo + 1;
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return lo + x % span;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // k distinct indices from [0, n), partial Fisher-Yates, order randomized.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (k > n) k = n;
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(uniform_int(0, n - 1 - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

  Array normal_array(std::vector<std::size_t> shape, double mean = 0.0,
                     double stddev = 1.0) {
    Array a(std::move(shape));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = normal(mean, stddev);
    return a;
  }

  Array uniform_array(std::vector<std::size_t> shape, double lo, double hi) {
    Array a(std::move(shape));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = uniform(lo, hi);
    return a;
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Decorrelated child seed for stream `id` of a master seed (splitmix64 step).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t id) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (id + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace popmech
