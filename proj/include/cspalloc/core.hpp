#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <gmpxx.h>

#include "common.hpp"
#include "rng.hpp"

namespace cspalloc {

// Periodic unit cell. Row i of m is lattice vector i in Angstrom, so a
// fractional coordinate f maps to cartesian f.x*m[0] + f.y*m[1] + f.z*m[2].
struct UnitCell {
    std::array<std::array<double, 3>, 3> m{};

    static UnitCell cubic(double a) {
        UnitCell c;
        c.m[0] = {a, 0, 0};
        c.m[1] = {0, a, 0};
        c.m[2] = {0, 0, a};
        return c;
    }

    Vec3 row(int i) const { return {m[i][0], m[i][1], m[i][2]}; }

    Vec3 cart(Vec3 frac) const {
        return frac.x * row(0) + frac.y * row(1) + frac.z * row(2);
    }

    double volume() const {
        Vec3 a = row(0), b = row(1), c = row(2);
        Vec3 bc{b.y * c.z - b.z * c.y, b.z * c.x - b.x * c.z, b.x * c.y - b.y * c.x};
        return std::abs(dot(a, bc));
    }

    // Rows of the reciprocal lattice scaled by 2*pi: k(m) = 2*pi * (L^-1)^T m,
    // so k . (r + integer lattice shift) changes by multiples of 2*pi.
    std::array<std::array<double, 3>, 3> reciprocal_rows() const {
        Vec3 a = row(0), b = row(1), c = row(2);
        Vec3 bc{b.y * c.z - b.z * c.y, b.z * c.x - b.x * c.z, b.x * c.y - b.y * c.x};
        double det = dot(a, bc);
        require(std::abs(det) > 1e-12, "unit cell is degenerate");
        Vec3 ca{c.y * a.z - c.z * a.y, c.z * a.x - c.x * a.z, c.x * a.y - c.y * a.x};
        Vec3 ab{a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
        const double s = 2.0 * std::numbers::pi / det;
        return {{{s * bc.x, s * bc.y, s * bc.z},
                 {s * ca.x, s * ca.y, s * ca.z},
                 {s * ab.x, s * ab.y, s * ab.z}}};
    }
};

// Uniform g x g x g fractional grid. Position index p maps to integer
// coordinates (x, y, z) with x fastest: p = x + g*(y + g*z).
struct GridSpec {
    int g = 0;

    std::size_t n() const { return static_cast<std::size_t>(g) * g * g; }

    std::array<int, 3> coords(std::size_t p) const {
        int x = static_cast<int>(p % g);
        int y = static_cast<int>((p / g) % g);
        int z = static_cast<int>(p / (static_cast<std::size_t>(g) * g));
        return {x, y, z};
    }

    std::size_t index(int x, int y, int z) const {
        auto wrap = [this](int v) { int r = v % g; return r < 0 ? r + g : r; };
        return static_cast<std::size_t>(wrap(x)) +
               static_cast<std::size_t>(g) * (static_cast<std::size_t>(wrap(y)) +
                                              static_cast<std::size_t>(g) * wrap(z));
    }
};

struct PositionSet {
    GridSpec grid;
    std::vector<Vec3> frac;
};

inline PositionSet build_grid(const GridSpec& grid) {
    require(grid.g >= 1, "grid resolution must be >= 1");
    PositionSet ps;
    ps.grid = grid;
    ps.frac.reserve(grid.n());
    for (std::size_t p = 0; p < grid.n(); ++p) {
        auto c = grid.coords(p);
        ps.frac.push_back({double(c[0]) / grid.g, double(c[1]) / grid.g, double(c[2]) / grid.g});
    }
    return ps;
}

// Shortest distance between two fractional points over the 27 neighbouring
// cells. Exact for cubic and mildly skewed cells.
inline double min_image_distance(const UnitCell& cell, Vec3 f1, Vec3 f2) {
    Vec3 d = f1 - f2;
    d.x -= std::round(d.x);
    d.y -= std::round(d.y);
    d.z -= std::round(d.z);
    double best = std::numeric_limits<double>::infinity();
    for (int sx = -1; sx <= 1; ++sx)
        for (int sy = -1; sy <= 1; ++sy)
            for (int sz = -1; sz <= 1; ++sz) {
                Vec3 r = cell.cart({d.x + sx, d.y + sy, d.z + sz});
                best = std::min(best, norm2(r));
            }
    return std::sqrt(best);
}

// Chemical species to be placed. Index k (one past the last real species)
// is the void slot; counts hold atoms per cell for the real species only.
struct SpeciesSet {
    std::vector<std::string> labels;
    std::vector<double> charges;
    std::vector<long> counts;

    std::size_t k() const { return labels.size(); }
    long total_atoms() const { return std::accumulate(counts.begin(), counts.end(), 0L); }

    void validate(std::size_t n) const {
        require(!labels.empty(), "species set is empty");
        require(charges.size() == labels.size() && counts.size() == labels.size(),
                "species arrays have mismatched lengths");
        for (long c : counts) require(c >= 0, "species count must be >= 0");
        require(total_atoms() >= 1, "at least one atom required");
        require(static_cast<std::size_t>(total_atoms()) <= n,
                "stoichiometry exceeds the number of grid positions");
    }
};

// Number of feasible allocations: n! / (c_1! ... c_k! (n-m)!). Exact, the
// value overflows any machine word for realistic cells.
inline mpz_class count_feasible(std::size_t n, const std::vector<long>& counts) {
    long m = 0;
    for (long c : counts) {
        require(c >= 0, "species count must be >= 0");
        m += c;
    }
    require(static_cast<std::size_t>(m) <= n, "stoichiometry exceeds grid size");
    mpz_class r;
    mpz_fac_ui(r.get_mpz_t(), static_cast<unsigned long>(n));
    mpz_class f;
    for (long c : counts) {
        mpz_fac_ui(f.get_mpz_t(), static_cast<unsigned long>(c));
        r /= f;
    }
    mpz_fac_ui(f.get_mpz_t(), static_cast<unsigned long>(n - m));
    r /= f;
    return r;
}

inline double log10_count(const mpz_class& c) {
    if (c <= 0) return -std::numeric_limits<double>::infinity();
    signed long exp2 = 0;
    double mant = mpz_get_d_2exp(&exp2, c.get_mpz_t());
    return std::log10(mant) + double(exp2) * std::log10(2.0);
}

// Hard assignment of one species (or void = k) to every grid position.
struct Allocation {
    std::vector<int> assign;
    std::size_t n() const { return assign.size(); }
};

struct AllocationVerdict {
    bool ok = false;
    std::vector<long> counts;
    std::string detail;
};

inline AllocationVerdict validate_allocation(const Allocation& x, std::size_t n,
                                             const std::vector<long>& target) {
    AllocationVerdict v;
    v.counts.assign(target.size(), 0);
    if (x.assign.size() != n) {
        v.detail = "assignment length " + std::to_string(x.assign.size()) +
                   " does not match n=" + std::to_string(n);
        return v;
    }
    const int k = static_cast<int>(target.size());
    for (int t : x.assign) {
        if (t < 0 || t > k) {
            v.detail = "species index " + std::to_string(t) + " out of range";
            return v;
        }
        if (t < k) ++v.counts[t];
    }
    for (int t = 0; t < k; ++t) {
        if (v.counts[t] != target[t]) {
            v.detail = "species " + std::to_string(t) + " has count " +
                       std::to_string(v.counts[t]) + ", expected " + std::to_string(target[t]);
            return v;
        }
    }
    v.ok = true;
    return v;
}

// Uniform sample over feasible allocations: lay the atoms out, then
// Fisher-Yates shuffle the whole assignment vector.
inline Allocation random_feasible(std::size_t n, const std::vector<long>& counts, Rng& rng) {
    long m = 0;
    for (long c : counts) m += c;
    require(static_cast<std::size_t>(m) <= n, "stoichiometry exceeds grid size");
    Allocation x;
    x.assign.reserve(n);
    for (std::size_t t = 0; t < counts.size(); ++t)
        x.assign.insert(x.assign.end(), counts[t], static_cast<int>(t));
    x.assign.insert(x.assign.end(), n - m, static_cast<int>(counts.size()));
    for (std::size_t i = n - 1; i > 0; --i) {
        std::size_t j = rng.uniform_int(i + 1);
        std::swap(x.assign[i], x.assign[j]);
    }
    return x;
}

// 0/1 matrix form of an allocation, one row per position, void column last.
inline Mat onehot(const Allocation& x, std::size_t k) {
    Mat s(x.n(), k + 1, 0.0);
    for (std::size_t p = 0; p < x.n(); ++p) s(p, static_cast<std::size_t>(x.assign[p])) = 1.0;
    return s;
}

} // namespace cspalloc
