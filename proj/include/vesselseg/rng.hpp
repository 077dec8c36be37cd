#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace vesselseg {

using Seed = std::uint64_t;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Derives an independent child seed from a root seed and up to three tags.
/// Every consumer of randomness gets its own stream, so adding or removing a
/// consumer never shifts another one.
inline Seed derive_seed(Seed root, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = splitmix64(root ^ 0x6a09e667f3bcc908ull);
    s = splitmix64(s ^ splitmix64(a + 0x3c6ef372fe94f82bull));
    s = splitmix64(s ^ splitmix64(b + 0xa54ff53a5f1d36f1ull));
    s = splitmix64(s ^ splitmix64(c + 0x510e527fade682d1ull));
    return s;
}

/// Deterministic random source. Draw helpers are implemented in-house so the
/// byte-for-byte stream does not depend on the standard library's
/// distribution internals.
class Rng {
public:
    explicit Rng(Seed seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    /// Uniform integer in [0, n), exact (rejection sampling).
    std::size_t uniform_index(std::size_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r;
        do {
            r = gen_();
        } while (r >= limit);
        return static_cast<std::size_t>(r % n);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (cosine branch only, stateless).
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace vesselseg
