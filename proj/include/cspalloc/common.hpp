#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cspalloc {

// Thrown for unusable inputs: malformed configs, broken invariants,
// infeasible requests. Numeric verdicts (feasible/infeasible states)
// are returned as values, not exceptions.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

// Dense row-major matrix of doubles. Minimal on purpose; every module
// that needs linear algebra works on this one type.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    std::size_t size() const { return a.size(); }
    void fill(double v) { a.assign(a.size(), v); }
};

// Placement index convention: placement (position p, species t) maps to
// a = t * n + p, i.e. vec(X) stacks the columns of the n x (k+1)
// allocation matrix. Species index k is the void slot.
inline std::size_t placement_index(std::size_t p, std::size_t t, std::size_t n) {
    return t * n + p;
}

inline std::size_t placement_position(std::size_t a, std::size_t n) { return a % n; }
inline std::size_t placement_species(std::size_t a, std::size_t n) { return a / n; }

// FNV-1a 64-bit hash, usable incrementally by threading the state through
// successive calls.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

// Worker count for parallel sections: CSPALLOC_THREADS if set and positive,
// otherwise hardware concurrency, never zero.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("CSPALLOC_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 v) { return {s * v.x, s * v.y, s * v.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm2(Vec3 v) { return dot(v, v); }

} // namespace cspalloc
