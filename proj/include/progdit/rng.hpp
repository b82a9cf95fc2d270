#pragma once

#include <cstdint>
#include <string>

namespace progdit {

// xoshiro256** with splitmix64 seeding. Used instead of std:: distributions
// so that streams are identical across standard-library implementations and
// the full state snapshots into checkpoints as four words.
class Rng {
 public:
  Rng() : Rng(0x9e3779b97f4a7c15ull) {}
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  // uniform in [0, 1)
  double uniform();
  // uniform in [lo, hi)
  double uniform(double lo, double hi);
  // uniform integer in [0, n)
  uint64_t uniform_index(uint64_t n);
  // standard normal via Box-Muller (two uniforms per draw, no cached spare)
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  std::string state_string() const;
  static Rng from_state_string(const std::string& s);

  // derive an independent stream (e.g. per subject, per trajectory)
  Rng fork(uint64_t salt) const;

 private:
  uint64_t s_[4];
};

// stable 64-bit FNV-1a for token hashing and seed derivation
uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64(const std::string& s);

}  // namespace progdit
