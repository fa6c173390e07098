// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace stepwise {

/// Mixes a seed with a salt into an independent-looking stream seed.
/// splitmix64 finalizer: cheap, well distributed, and stable across
/// platforms, which keeps derived sub-seeds reproducible everywhere.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// FNV-1a hash of a byte string; used to derive per-item seeds from ids.
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Deterministic random source. All randomness in the library flows through
/// this wrapper so frozen test values survive standard-library changes:
/// mt19937_64 output is specified exactly, and the two draw routines below
/// use only its raw 64-bit output, never distribution objects (whose
/// algorithms are implementation-defined).
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). Rejection sampling avoids modulo bias.
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Bernoulli draw with success probability p.
    bool bernoulli(double p) { return uniform() < p; }

    uint64_t raw() { return engine_(); }

  private:
    std::mt19937_64 engine_;
};

}  // namespace stepwise
