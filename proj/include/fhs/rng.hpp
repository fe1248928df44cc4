#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace fhs {

// All randomness in the project flows from one 64-bit root seed through
// named derivation: derive_seed(root, purpose, a, b) yields the seed of an
// independent stream. No global RNG state anywhere.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                          std::uint64_t a = 0, std::uint64_t b = 0);

// Self-contained generator (splitmix64-seeded xoshiro256++). We do not use
// std::<distribution>s: their output is implementation-defined and the
// simulator promises bitwise reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t u64();
  // uniform in [0,1)
  double uniform();
  double uniform(double lo, double hi);
  // uniform integer in [0,n), n > 0
  std::uint64_t uniform_int(std::uint64_t n);
  // standard normal (Box-Muller, both halves used)
  double normal();
  double normal(double mean, double stddev);
  // Gamma(shape,1), shape > 0 (Marsaglia-Tsang)
  double gamma(double shape);
  // proportions summing to 1, drawn from Dirichlet(alpha * 1_k)
  std::vector<double> dirichlet(double alpha, int k);

  // Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0,n), in random order
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  std::uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace fhs
