#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ferm {

// splitmix64; used to derive independent stream seeds from a base seed.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seed value for an independent substream; same (seed, stream) always yields
// the same value. Used both for Rng streams and for seeding components that
// take a raw seed.
inline uint64_t substream_seed(uint64_t seed, uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream + 0x517cc1b727220a95ull));
}

// Deterministic RNG. All distributions are implemented by hand on top of
// mt19937_64 so that sequences are identical across platforms and standard
// library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // Independent stream: same (seed, stream) always yields the same sequence.
  static Rng derive(uint64_t seed, uint64_t stream) {
    return Rng(substream_seed(seed, stream));
  }

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  float uniformf() { return static_cast<float>(uniform()); }

  // Uniform integer in [0, n), n > 0. Lemire rejection, unbiased.
  uint64_t uniform_u64(uint64_t n) {
    uint64_t x = gen_();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    uint64_t l = static_cast<uint64_t>(m);
    if (l < n) {
      uint64_t t = (0 - n) % n;
      while (l < t) {
        x = gen_();
        m = static_cast<__uint128_t>(x) * n;
        l = static_cast<uint64_t>(m);
      }
    }
    return static_cast<uint64_t>(m >> 64);
  }

  int uniform_int(int n) { return static_cast<int>(uniform_u64(static_cast<uint64_t>(n))); }

  // Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  float normalf() { return static_cast<float>(normal()); }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Named stream ids so every consumer of randomness derives from the run seed
// in a fixed, collision-free way.
namespace stream {
inline constexpr uint64_t env = 1;
inline constexpr uint64_t net_init = 2;
inline constexpr uint64_t action = 3;
inline constexpr uint64_t replay = 4;
inline constexpr uint64_t crop = 5;
inline constexpr uint64_t pretrain = 6;
inline constexpr uint64_t expert = 7;
inline constexpr uint64_t mvp = 8;
inline constexpr uint64_t demo_env = 9;
inline constexpr uint64_t eval_env = 10;
}  // namespace stream

}  // namespace ferm
