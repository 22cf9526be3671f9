#ifndef MESEG_RNG_HPP
#define MESEG_RNG_HPP

#include <cstdint>
#include <vector>

namespace meseg {

// Deterministic 64-bit generator used for everything random in this project
// (weight init, data synthesis, shuffling). The algorithm is xoshiro256++
// seeded through SplitMix64, so streams are reproducible across platforms
// and compilers. Distinct substreams are derived from (root seed, index)
// pairs, which lets independent samples be generated in any order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Substream `index` of the stream rooted at `root`. Substreams with
  // different indices are statistically independent.
  static Rng substream(std::uint64_t root, std::uint64_t index);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01();

  // Uniform in [lo, hi).
  double uniform(double lo, double hi);

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t bounded(std::uint64_t n);

  // Standard normal via Box-Muller (cosine branch only, one draw per
  // two uniforms). Kept explicit instead of std::normal_distribution so
  // the stream is identical on every standard library.
  double normal();
  double normal(double mean, double stddev);

  // In-place Fisher-Yates shuffle, descending index order.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_[4];
};

// SplitMix64 step: advances x and returns the next output.
std::uint64_t splitmix64(std::uint64_t& x);

// 64-bit seed of substream `index` under `root`; Rng::substream(root, i)
// behaves exactly like Rng(derive_seed(root, i)).
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

}  // namespace meseg

#endif
