#pragma once

#include <cstdint>

namespace padprobe {

// Deterministic, platform-stable stream. std::mt19937 + distributions are not
// byte-stable across standard library releases, and dataset regeneration must be.
class Rng {
public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  // [0, 1), 53-bit mantissa
  double uniform();
  double uniform(double lo, double hi);
  // [0, n), unbiased
  uint64_t uniform_int(uint64_t n);
  int uniform_int(int lo, int hi);  // inclusive range
  double normal();

  // Derive a stream seed from (seed, stream_id...) without constructing an Rng.
  static uint64_t mix(uint64_t seed, uint64_t stream);
  static uint64_t mix(uint64_t seed, uint64_t a, uint64_t b);

private:
  uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace padprobe
