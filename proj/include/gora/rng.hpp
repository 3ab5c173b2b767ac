#pragma once

#include "gora/numerics.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace gora {

/// xoshiro256** seeded through splitmix64. The stream is a pure function of
/// the 64-bit seed, independent of platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random mantissa bits.
  double uniform();
  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  std::optional<double> cached_normal_;
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent stream seed from (root, purpose tag, id).
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t id = 0);

/// I.i.d. standard normal entries, filled in row-major order.
Matrix sample_gaussian(Rng& rng, std::size_t rows, std::size_t cols);

/// Kaiming uniform with negative slope a = √5: gain √(2/(1+a²)) = √(1/3), so
/// the bound gain·√(3/fan_in) collapses to 1/√fan_in. Entries lie in
/// [-1/√fan_in, 1/√fan_in), filled in row-major order.
Matrix sample_kaiming_uniform(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in);

}  // namespace gora
