#include "cilforge/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <utility>

namespace cilforge {

double SplitMix64::normal(double mean, double stddev) {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
  SplitMix64 g(base);
  std::uint64_t h = g.next();
  for (std::uint64_t part : {a, b, c}) {
    SplitMix64 m(h ^ (part * 0xD6E8FEB86659FD93ULL));
    h = m.next();
  }
  return h;
}

std::uint64_t tag(std::string_view label) {
  // FNV-1a
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : label) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

void shuffle_in_place(std::vector<int>& v, SplitMix64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

std::vector<int> seeded_permutation(int n, std::uint64_t seed) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  SplitMix64 rng(seed);
  shuffle_in_place(v, rng);
  return v;
}

}  // namespace cilforge
