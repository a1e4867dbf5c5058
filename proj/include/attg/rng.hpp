#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace attg {

// Mixes a seed with a list of indices into a new 64-bit seed (splitmix64 chain).
// Used to give every image/epoch/worker its own stream independent of scheduling.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> indices);

// Seeded generator with platform-stable conversions. The standard distributions are
// implementation-defined, so uniform/normal draws are computed here directly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  // Normal(0, std) resampled until within two standard deviations.
  double truncated_normal(double std);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace attg
