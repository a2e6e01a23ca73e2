#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace fedclust {

/// All randomness flows through std::mt19937_64 engines seeded from a single
/// master seed via named streams. mt19937_64 output is pinned by the standard,
/// and the helpers below avoid std::*_distribution (whose algorithms are
/// implementation-defined), so runs reproduce bit-for-bit across platforms.
using Rng = std::mt19937_64;

namespace detail {

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Derives the seed of the stream `name[index]` from the master seed.
/// Distinct names (and indices) give statistically independent engines, so
/// toggling one source of randomness does not perturb the others.
inline std::uint64_t stream_seed(std::uint64_t master, std::string_view name,
                                 std::uint64_t index = 0) {
  std::uint64_t x = master;
  x = detail::splitmix64(x ^ detail::fnv1a64(name));
  x = detail::splitmix64(x ^ (index + 1));
  return x;
}

inline Rng make_stream(std::uint64_t master, std::string_view name,
                       std::uint64_t index = 0) {
  return Rng(stream_seed(master, name, index));
}

/// Uniform draw in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). Uses rejection to stay unbiased.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % n;
}

/// Standard normal draw via Box-Muller (two uniforms per draw; the sine
/// partner is discarded to keep the sampler stateless).
inline double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1], keeps log finite
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace fedclust
