#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace ucf::num {

// splitmix64 step: z = (x += 0x9E3779B97F4A7C15);
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//   return z ^ (z >> 31).
std::uint64_t splitmix64(std::uint64_t& state);

// 64-bit FNV-1a over the bytes of `label`.
std::uint64_t fnv1a64(std::string_view label);

// Child seed for a named subsystem: splitmix64 applied once to (root ^ fnv1a64(label)).
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

// xoshiro256** with its 256-bit state filled by four splitmix64 draws from
// the seed. The integer stream is identical on every platform.
//   result = rotl(s1 * 5, 7) * 9
//   t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t; s3 = rotl(s3, 45)
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // (next_u64() >> 11) * 2^-53, in [0, 1).
  double uniform();
  double uniform(double lo, double hi);

  // Unbiased integer in [0, n) by rejection on the top bits.
  std::uint64_t below(std::uint64_t n);

  // Box-Muller; one normal per call (the second value is discarded).
  double normal();
  double normal(double mean, double stddev);

  // Fisher-Yates, from the last element down.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // `k` distinct indices from [0, n) in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t s_[4];
};

}  // namespace ucf::num
