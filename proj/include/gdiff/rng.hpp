#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace gdiff {

// splitmix64 mix; used to derive independent stream seeds from one base seed.
uint64_t mix_seed(uint64_t base, uint64_t stream);

// Seeded generator with hand-rolled distribution transforms so that draws are
// bit-identical across platforms and standard-library versions. Every sampling
// entry point in the library takes one of these explicitly; there is no global
// generator.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed), seed_(seed) {}

  uint64_t seed() const { return seed_; }
  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller (cacheless; consumes two uniforms).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);

  // Index sampled from an unnormalized nonnegative weight vector.
  int categorical(const double* weights, int k);
  int categorical(const std::vector<double>& weights) {
    return categorical(weights.data(), static_cast<int>(weights.size()));
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (int i = static_cast<int>(items.size()) - 1; i > 0; --i) {
      int j = uniform_int(0, i);
      std::swap(items[static_cast<size_t>(i)], items[static_cast<size_t>(j)]);
    }
  }

  // Independent generator for a named substream of this one's seed.
  Rng child(uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_;
};

}  // namespace gdiff
