#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cspalloc {

// splitmix64 step, used to derive independent per-shot seeds from a base seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic random source. mt19937_64 output is fully specified by the
// standard; the distribution transforms below are written out by hand because
// std::uniform_*_distribution may differ across standard libraries, and
// reruns with equal seeds must be byte-identical everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Unbiased integer in [0, bound) via rejection.
    std::uint64_t uniform_int(std::uint64_t bound) {
        if (bound == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return x % bound;
    }

    // Standard Gumbel(0,1) via inverse CDF -log(-log(u)); u is clamped away
    // from {0,1} so both logs stay finite.
    double gumbel() {
        double u = uniform01();
        if (u < 1e-300) u = 1e-300;
        if (u > 1.0 - 1e-16) u = 1.0 - 1e-16;
        return -std::log(-std::log(u));
    }

private:
    std::mt19937_64 eng_;
};

// Inverse-CDF transform on a given uniform sample, exposed for tests.
inline double gumbel_from_uniform(double u) {
    if (u < 1e-300) u = 1e-300;
    if (u > 1.0 - 1e-16) u = 1.0 - 1e-16;
    return -std::log(-std::log(u));
}

} // namespace cspalloc
