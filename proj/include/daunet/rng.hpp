#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace daunet {

// Derives an independent seed for a named substream ("init", "shuffle",
// "augment", "phantom", ...) plus an integer index.
std::uint64_t mix_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0)
      : engine_(mix_seed(seed, stream, index)) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace daunet
