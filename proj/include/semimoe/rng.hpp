#pragma once

#include <cstdint>
#include <initializer_list>

namespace semimoe {

// All randomness in the project flows from one root seed, fanned out by
// hashing (root, stream tag, counters). Any training step is therefore a
// pure function of (parameters, optimizer state, epoch, iteration), which
// is what makes checkpoint resume exactly equivalent to an uninterrupted
// run. std:: distributions are avoided because their output is
// implementation-defined; the generators below are pinned bit-for-bit.

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t seed_hash(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0x5ee2d1a4c0ff1aabULL;
  for (uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

// Stream tags for fan-out; numeric values are part of the reproducibility
// contract and must not be reordered.
enum class SeedTag : uint64_t {
  kParamInit = 1,
  kDataGen = 2,
  kSplit = 3,
  kAugment = 4,
  kBatchLabeled = 5,
  kBatchUnlabeled = 6,
  kDropout = 7,
  kTestMisc = 99,
};

// xoshiro256** — small, fast, and fixed across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& si : s_) {
      x = splitmix64(x);
      si = x;
    }
  }
  Rng(uint64_t root, SeedTag tag, uint64_t a = 0, uint64_t b = 0)
      : Rng(seed_hash({root, static_cast<uint64_t>(tag), a, b})) {}

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  int64_t next_index(int64_t n) { return static_cast<int64_t>(next_double() * static_cast<double>(n)); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Box-Muller; consumes two uniforms per call (no caching, keeps the
  // stream position a simple function of the call count).
  double normal(double mean = 0.0, double stddev = 1.0);

  bool bernoulli(double p) { return next_double() < p; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

}  // namespace semimoe
