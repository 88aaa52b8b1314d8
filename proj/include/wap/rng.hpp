#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace wap {

std::uint64_t splitmix64(std::uint64_t& state);

// Deterministic random source. All distribution transforms are implemented
// here (not via std:: distributions) so that sequences are identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Standard normal via Box-Muller.
  double normal();
  // Uniform integer in [0, n), n >= 1.
  std::int64_t uniform_int(std::int64_t n);
  // k distinct values from [0, n), sorted ascending.
  std::vector<int> sample_without_replacement(int n, int k);
  // In-place Fisher-Yates permutation.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }
  // Independent stream derived from this rng's seed and a stream id.
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace wap
