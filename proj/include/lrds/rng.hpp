#pragma once

#include <cstdint>
#include <random>

namespace lrds {

// mt19937_64 output is fixed by the standard, so seeded runs reproduce across
// toolchains. Bounded draws avoid std::uniform_int_distribution for the same
// reason (its algorithm is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, bound). bound must be nonzero.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % bound;
  }

  /// Uniform in [lo, hi].
  std::uint64_t between(std::uint64_t lo, std::uint64_t hi) { return lo + below(hi - lo + 1); }

  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Child generator for an independent stream (trial i of a campaign).
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    Rng r;
    r.engine_.seed(seq);
    return r;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace lrds
