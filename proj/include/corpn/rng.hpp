#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace corpn {

/// SplitMix64 finalizer. Used to derive independent stream seeds from keys.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Stream purposes. Every random draw in the library belongs to exactly one.
enum class Stream : std::uint64_t {
  World = 1,
  Scene = 2,
  FeatureNoise = 3,
  HeadInit = 4,
  Minibatch = 5,
  ClassifierInit = 6,
  ClassifierSample = 7,
  Gradcheck = 8,
};

/// Derives a deterministic seed from (root seed, purpose, keys...). The same
/// key tuple always yields the same stream regardless of call order, which is
/// what makes scene and feature generation safe to parallelize.
inline std::uint64_t stream_seed(std::uint64_t root, Stream purpose,
                                 std::initializer_list<std::uint64_t> keys = {}) {
  std::uint64_t h = mix64(root ^ mix64(static_cast<std::uint64_t>(purpose)));
  for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632BE59BD9B4E019ULL));
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, Stream purpose,
                    std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(stream_seed(root, purpose, keys));
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Counter-based standard normal: a pure function of (key, counter), so any
/// element of a noise field can be produced independently of the others.
inline double counter_normal(std::uint64_t key, std::uint64_t counter) {
  const std::uint64_t a = mix64(key ^ mix64(2 * counter));
  const std::uint64_t b = mix64(key ^ mix64(2 * counter + 1));
  const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;          // [0, 1)
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

}  // namespace corpn
