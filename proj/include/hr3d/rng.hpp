#pragma once

#include <cstdint>
#include <random>

namespace hr3d {

// Deterministic random source.  The engine (mt19937_64) and every
// distribution transform are pinned here, so a seed plus a call sequence
// yields the same stream everywhere; the std:: distribution adapters are
// deliberately not used because their output is implementation-defined.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform double in [a, b).  Degenerate a == b returns a exactly.
    double uniform(double a, double b);

    // Box-Muller normal; sigma == 0 returns mu exactly without consuming
    // engine state.  The spare half of each Box-Muller pair is cached.
    double normal(double mu, double sigma);

    // Uniform integer in [0, n), rejection-sampled so every value has
    // equal probability.
    std::int64_t uniform_int(std::int64_t n);

    // Independent stream derived from the construction seed and a stream
    // id.  Children do not depend on how much of this stream was consumed.
    Rng child(std::uint64_t stream) const;

    std::uint64_t seed() const { return seed_; }

  private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace hr3d
