#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace bset {

// Mixes a seed with any number of indices into a new 64-bit seed
// (splitmix64 finalizer chained over the inputs). Used to give every
// (gallery, set, pass) its own stream independent of execution order.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys);

// Deterministic random source. Uniform and index draws are computed from
// raw 64-bit words so they do not depend on the standard library's
// distribution implementations.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  // Standard normal via Box-Muller on uniform().
  double normal();

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bset
