#include "hr3d/rng.hpp"

#include <cmath>
#include <numbers>

#include "hr3d/common.hpp"

namespace hr3d {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform(double a, double b) {
    if (!(a <= b)) throw DataError("Rng::uniform: requires a <= b");
    if (a == b) return a;
    // 53 random bits -> [0, 1)
    const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return a + (b - a) * u;
}

double Rng::normal(double mu, double sigma) {
    if (sigma < 0.0) throw DataError("Rng::normal: requires sigma >= 0");
    if (sigma == 0.0) return mu;
    if (has_spare_) {
        has_spare_ = false;
        return mu + sigma * spare_;
    }
    // u1 in (0, 1] keeps the log finite.
    const double u1 = 1.0 - static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return mu + sigma * radius * std::cos(angle);
}

std::int64_t Rng::uniform_int(std::int64_t n) {
    if (n <= 0) throw DataError("Rng::uniform_int: requires n > 0");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = ~0ull - (~0ull % un + 1) % un;
    std::uint64_t x = next_u64();
    while (x > limit) x = next_u64();
    return static_cast<std::int64_t>(x % un);
}

Rng Rng::child(std::uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream + 1)));
}

}  // namespace hr3d
