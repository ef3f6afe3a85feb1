#pragma once

// Counter-based random generator. Every draw is a pure function of
// (seed, counter), so perturbation vectors can be regenerated from a seed
// instead of being stored.

#include <cmath>
#include <cstdint>

namespace qzoff::rng {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

struct CounterRng {
    uint64_t seed = 0;

    uint64_t raw(uint64_t counter) const {
        return splitmix64(seed ^ splitmix64(counter));
    }

    // Uniform in [0, 1).
    double uniform(uint64_t counter) const {
        return static_cast<double>(raw(counter) >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller on the two 32-bit halves of one draw.
    double normal(uint64_t counter) const {
        uint64_t r = raw(counter);
        double u1 = (static_cast<double>(r >> 32) + 1.0) * 0x1.0p-32;  // (0, 1]
        double u2 = static_cast<double>(r & 0xFFFFFFFFULL) * 0x1.0p-32;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // Equiprobable {-1, +1}.
    double pm_one(uint64_t counter) const {
        return (raw(counter) >> 63) ? 1.0 : -1.0;
    }
};

// Derive an independent stream seed, e.g. per training step or inner sample.
inline uint64_t derive_seed(uint64_t base, uint64_t salt) {
    return splitmix64(base ^ splitmix64(salt + 0x517CC1B727220A95ULL));
}

}  // namespace qzoff::rng
