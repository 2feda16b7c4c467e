#pragma once

#include <cstdint>
#include <random>

namespace normsgame {

// One splitmix64 step: add the golden-ratio increment, then mix.
std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent child seed for a numbered stream of a parent seed.
// derive_seed(parent, k) = splitmix64(parent + 0x9E3779B97F4A7C15 * (k + 1)).
// Trial k of a master seed, epoch e of a trial and round r of an epoch are all
// derived this way, so any of them can be reproduced in isolation.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream);

// Seeded generator with a portable draw procedure.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The std:: distributions are not portable, so the derived draws are
// implemented here. cursor() counts raw 64-bit words consumed:
//   uniform_index(n)  one word, plus one per rejected word (rare)
//   uniform01()       one word
//   normal()          exactly two words (Box-Muller, no cached spare)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() {
    ++cursor_;
    return engine_();
  }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  // Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);

  // Uniform double in [0, 1) with 53 bits of resolution.
  double uniform01();

  // True with probability numerator / denominator, using one uniform_index draw.
  bool bernoulli_ratio(std::uint64_t numerator, std::uint64_t denominator);

  // Standard normal sample.
  double normal();

  std::uint64_t cursor() const { return cursor_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t cursor_ = 0;
};

}  // namespace normsgame
