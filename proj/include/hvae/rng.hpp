#pragma once

#include <array>
#include <cstdint>

namespace hvae {

/// xoshiro256** seeded through splitmix64.
///
/// Streams are identical on every platform: only 64-bit integer arithmetic
/// feeds the state, and doubles are built from the top 53 bits. Gaussian
/// variates use the Box-Muller transform, consuming two uniforms per pair.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();

  /// Independent child stream keyed by `counter`; does not advance this one.
  Rng split(std::uint64_t counter) const;

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace hvae
