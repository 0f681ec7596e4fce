#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "alphaforge/util.hpp"

namespace alphaforge {

// Counter-based generator (splitmix64). Every stream is keyed explicitly, so
// any draw sequence can be reproduced in isolation from its key alone.
// Deliberately avoids <random> distributions, whose output is
// implementation-defined.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // [0, n) without modulo bias (Lemire multiply-shift on the high bits).
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) return 0;
        unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<uint64_t>(wide >> 64);
    }

    // inclusive [lo, hi]
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (hi <= lo) return lo;
        return lo + static_cast<int64_t>(uniform_int(static_cast<uint64_t>(hi - lo) + 1));
    }

    bool bernoulli(double p) { return next_double() < p; }

    // Box-Muller; draws two uniforms per call, spare discarded for replayability.
    double normal(double mean = 0.0, double sd = 1.0) {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        return mean + sd * z;
    }

  private:
    uint64_t state_;
};

// Key derivation for (seed, iteration, agent, month, purpose)-style streams.
inline uint64_t derive_key(uint64_t base, std::string_view purpose) {
    return fnv1a(purpose, hash_mix(1469598103934665603ULL, base));
}

inline uint64_t derive_key(uint64_t base, uint64_t a, std::string_view purpose) {
    return fnv1a(purpose, hash_mix(hash_mix(1469598103934665603ULL, base), a));
}

inline uint64_t derive_key(uint64_t base, uint64_t a, uint64_t b, std::string_view purpose) {
    return fnv1a(purpose, hash_mix(hash_mix(hash_mix(1469598103934665603ULL, base), a), b));
}

}  // namespace alphaforge
