#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace cilforge {

// SplitMix64 (Steele, Lea, Flood 2014). Every random draw in the framework
// goes through this generator so that runs are reproducible across platforms
// and standard-library implementations.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one normal per call, the sine branch is discarded.
  double normal(double mean = 0.0, double stddev = 1.0);

  // Integer in [0, bound) by plain modulo reduction.
  std::uint64_t below(std::uint64_t bound) { return next() % bound; }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// Stable stream derivation: mixes a base seed with a sequence of tags so that
// e.g. (seed, task 3, epoch 2, "batches") always yields the same stream no
// matter what else was drawn before.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);
std::uint64_t tag(std::string_view label);

// Fisher-Yates: for i = n-1 .. 1, j = next() % (i + 1), swap(v[i], v[j]).
void shuffle_in_place(std::vector<int>& v, SplitMix64& rng);

// Identity permutation of [0, n) shuffled with a SplitMix64 seeded by `seed`.
std::vector<int> seeded_permutation(int n, std::uint64_t seed);

}  // namespace cilforge
