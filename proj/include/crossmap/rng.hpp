#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace crossmap {

// Mixes a seed with a textual tag into a new seed. Used to derive independent
// per-purpose streams (per epoch, per episode, per step) from one global seed
// so that runs are reproducible and resumable without threading RNG state.
uint64_t mix_seed(uint64_t seed, std::string_view tag);
uint64_t mix_seed(uint64_t seed, uint64_t salt);

// Deterministic random source. Raw mt19937_64 bits with our own uniform and
// normal transforms; std::*_distribution output differs between standard
// library implementations, which would break byte-level reproducibility of
// generated worlds and checkpoints.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n);

  // Standard normal via Box-Muller; one value per call.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derived stream seeded from this rng's seed and the tag, independent of
  // how much of this stream has been consumed.
  Rng split(std::string_view tag) const { return Rng(mix_seed(seed_, tag)); }
  Rng split(uint64_t salt) const { return Rng(mix_seed(seed_, salt)); }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace crossmap
