#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "ecmc/error.hpp"

namespace ecmc {

// Deterministic counter-based random stream. All randomness in the library
// flows from one named seed; subsystems derive independent streams via
// split(), which depends only on the seed and the label, never on how many
// values the parent has drawn.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    // Independent stream keyed by a label. Stable under reordering of draws.
    Rng split(std::string_view label) const {
        return Rng(mix(seed_, fnv1a(label)));
    }

    Rng split(std::uint64_t index) const {
        return Rng(mix(seed_, mix(0x9e3779b97f4a7c15ull, index)));
    }

    std::uint64_t seed() const { return seed_; }

    // splitmix64 step
    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) via 128-bit multiply-shift.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw ContractError("Rng::uniform_index: n must be positive");
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; draws two uniforms per sample, no caching so the stream
    // position stays a pure function of the number of calls.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t state_;
};

} // namespace ecmc
