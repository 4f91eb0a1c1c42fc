#pragma once

#include <cstdint>
#include <limits>
#include <random>

#include "mfm/common.hpp"

namespace mfm {

/// xoshiro256** seeded through splitmix64. Every (seed, stream key) pair
/// names an independent generator, so a chain's draws never depend on
/// which worker handles it.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) { reseed(seed); }

  Rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
      std::uint64_t c = 0) {
    std::uint64_t h = mix(seed ^ 0x6a09e667f3bcc909ULL);
    h = mix(h ^ (a + 0x9e3779b97f4a7c15ULL));
    h = mix(h ^ (b + 0xbb67ae8584caa73bULL));
    h = mix(h ^ (c + 0x3c6ef372fe94f82bULL));
    reseed(h);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1]; safe to take the log of.
  double uniform_pos() { return 1.0 - uniform(); }

  double normal() {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(*this);
  }

  void fill_normal(Eigen::Ref<Vector> v) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(*this);
  }

  Vector normal_vector(Eigen::Index n) {
    Vector v(n);
    fill_normal(v);
    return v;
  }

  /// Rademacher entries (+1 / -1).
  void fill_rademacher(Eigen::Ref<Vector> v) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v[i] = ((*this)() >> 63) ? 1.0 : -1.0;
  }

  std::size_t index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(*this);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  void reseed(std::uint64_t seed) {
    // splitmix64 sequence: mix() advances by the golden-ratio increment.
    std::uint64_t z = seed;
    for (auto& s : s_) {
      s = mix(z);
      z += 0x9e3779b97f4a7c15ULL;
    }
  }

  std::uint64_t s_[4]{};
};

/// Stream tags used when deriving per-chain generators.
enum class Stream : std::uint64_t {
  Init = 1,
  Local = 2,
  Flow = 3,
  Train = 4,
  Resample = 5,
  Diagnostics = 6,
  Oracle = 7,
  Reference = 8,
};

inline Rng stream_rng(std::uint64_t seed, Stream tag, std::uint64_t iteration,
                      std::uint64_t chain) {
  return Rng(seed, static_cast<std::uint64_t>(tag), iteration, chain);
}

}  // namespace mfm
