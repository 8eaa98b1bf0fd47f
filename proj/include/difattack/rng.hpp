#pragma once

#include <cstdint>
#include <random>

#include "difattack/tensor.hpp"

namespace difattack {

using Rng = std::mt19937_64;

/// Independent child seed for stream `index` of `seed` (splitmix64 mixing).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline void fill_normal(Tensor& t, Rng& rng, float mean = 0.0f, float stddev = 1.0f) {
  std::normal_distribution<float> dist(mean, stddev);
  for (float& v : t.data()) v = dist(rng);
}

inline void fill_uniform(Tensor& t, Rng& rng, float lo, float hi) {
  std::uniform_real_distribution<float> dist(lo, hi);
  for (float& v : t.data()) v = dist(rng);
}

inline Tensor normal_tensor(const Shape& shape, Rng& rng, float mean = 0.0f, float stddev = 1.0f) {
  Tensor t(shape);
  fill_normal(t, rng, mean, stddev);
  return t;
}

}  // namespace difattack
