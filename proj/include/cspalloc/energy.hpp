#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"
#include "core.hpp"
#include "rng.hpp"

namespace cspalloc {

// Coulomb constant in eV * Angstrom / e^2.
inline constexpr double k_coulomb = 14.399645;

struct BuckinghamParams {
    double A = 0.0;   // eV
    double rho = 1.0; // Angstrom, must be > 0 when A != 0
    double C = 0.0;   // eV * Angstrom^6
};

// Short-range pair energy A exp(-r/rho) - C/r^6 at separation r > 0.
inline double buckingham_pair(double r, const BuckinghamParams& p) {
    if (!(r > 0.0)) throw NumericError("buckingham_pair requires r > 0");
    if (p.A != 0.0 && !(p.rho > 0.0)) throw NumericError("buckingham rho must be > 0");
    double e = 0.0;
    if (p.A != 0.0) e += p.A * std::exp(-r / p.rho);
    if (p.C != 0.0) e -= p.C / std::pow(r, 6);
    return e;
}

// Ewald splitting controls. Defaults follow the cell size: alpha = 5/L,
// r_cut = L/2, k_cut chosen so the reciprocal tail factor is ~1e-8.
struct EwaldParams {
    double alpha = 0.0;
    double r_cut = 0.0;
    double k_cut = 0.0;

    static EwaldParams defaults(const UnitCell& cell) {
        double L = std::cbrt(cell.volume());
        EwaldParams p;
        p.alpha = 5.0 / L;
        p.r_cut = L / 2.0;
        p.k_cut = 8.6 * p.alpha;
        return p;
    }

    void validate() const {
        require(alpha > 0.0 && r_cut > 0.0 && k_cut > 0.0,
                "ewald parameters must be positive");
    }
};

namespace detail {

// Integer shift bound per lattice direction so that every image within
// r_cut is enumerated. width_i is the perpendicular distance between the
// two cell faces spanned by the other two lattice vectors.
inline std::array<int, 3> shift_bounds(const UnitCell& cell, double r_cut) {
    std::array<int, 3> b{};
    double V = cell.volume();
    for (int i = 0; i < 3; ++i) {
        Vec3 u = cell.row((i + 1) % 3), v = cell.row((i + 2) % 3);
        Vec3 cr{u.y * v.z - u.z * v.y, u.z * v.x - u.x * v.z, u.x * v.y - u.y * v.x};
        double area = std::sqrt(norm2(cr));
        double width = V / area;
        b[i] = static_cast<int>(std::ceil(r_cut / width)) + 1;
    }
    return b;
}

// Real-space lattice sum of erfc(alpha r)/r over images of the fractional
// offset df, restricted to 0 < r <= r_cut. The r = 0 term is skipped, so
// df = 0 yields the interaction of a point with its own periodic images.
inline double ewald_real_sum(const UnitCell& cell, Vec3 df, double alpha, double r_cut) {
    auto b = shift_bounds(cell, r_cut);
    double tot = 0.0;
    for (int sx = -b[0]; sx <= b[0]; ++sx)
        for (int sy = -b[1]; sy <= b[1]; ++sy)
            for (int sz = -b[2]; sz <= b[2]; ++sz) {
                Vec3 r = cell.cart({df.x + sx, df.y + sy, df.z + sz});
                double d2 = norm2(r);
                if (d2 < 1e-20 || d2 > r_cut * r_cut) continue;
                double d = std::sqrt(d2);
                tot += std::erfc(alpha * d) / d;
            }
    return tot;
}

// Reciprocal-space sum (4 pi / V) * sum_{0<|k|<=k_cut} exp(-k^2/4a^2)/k^2 cos(k.r).
inline double ewald_recip_sum(const UnitCell& cell, Vec3 df, double alpha, double k_cut) {
    auto rec = cell.reciprocal_rows();
    Vec3 g0{rec[0][0], rec[0][1], rec[0][2]};
    Vec3 g1{rec[1][0], rec[1][1], rec[1][2]};
    Vec3 g2{rec[2][0], rec[2][1], rec[2][2]};
    auto bound = [&](Vec3 g) {
        return static_cast<int>(std::ceil(k_cut / std::sqrt(norm2(g)))) + 1;
    };
    int b0 = bound(g0), b1 = bound(g1), b2 = bound(g2);
    Vec3 r = cell.cart(df);
    double inv4a2 = 1.0 / (4.0 * alpha * alpha);
    double tot = 0.0;
    for (int m0 = -b0; m0 <= b0; ++m0)
        for (int m1 = -b1; m1 <= b1; ++m1)
            for (int m2 = -b2; m2 <= b2; ++m2) {
                if (m0 == 0 && m1 == 0 && m2 == 0) continue;
                Vec3 kv = double(m0) * g0 + double(m1) * g1 + double(m2) * g2;
                double k2 = norm2(kv);
                if (k2 > k_cut * k_cut) continue;
                tot += std::exp(-k2 * inv4a2) / k2 * std::cos(dot(kv, r));
            }
    return tot * 4.0 * std::numbers::pi / cell.volume();
}

inline bool same_lattice_point(Vec3 df) {
    auto near_int = [](double v) { return std::abs(v - std::round(v)) < 1e-9; };
    return near_int(df.x) && near_int(df.y) && near_int(df.z);
}

} // namespace detail

// Coulomb contribution of a placement pair under periodic boundary
// conditions. For distinct positions this is the full ordered-pair term
// k_e q1 q2 (real + reciprocal); an energy built from it counts each
// unordered pair once. For p1 == p2 it is the per-ion constant: half the
// own-image interaction plus the reciprocal diagonal minus the Gaussian
// self term.
inline double ewald_pair(const UnitCell& cell, Vec3 f1, Vec3 f2, double q1, double q2,
                         const EwaldParams& ew) {
    ew.validate();
    Vec3 df = f1 - f2;
    double real = detail::ewald_real_sum(cell, df, ew.alpha, ew.r_cut);
    double recip = detail::ewald_recip_sum(cell, df, ew.alpha, ew.k_cut);
    if (detail::same_lattice_point(df)) {
        return k_coulomb * q1 * q2 *
               (0.5 * real + 0.5 * recip - ew.alpha / std::sqrt(std::numbers::pi));
    }
    return k_coulomb * q1 * q2 * (real + recip);
}

// Species-resolved interaction model: charges plus Buckingham parameters
// for every unordered species pair. Optional overrides for the Ewald
// controls and the short-range cutoff travel with the file.
struct ForceField {
    std::vector<std::string> species;
    std::vector<double> charges;
    std::vector<std::optional<BuckinghamParams>> pairs; // k*k, symmetric
    std::optional<double> r_cut_override;
    std::optional<double> alpha_override;
    std::optional<double> k_cut_override;

    std::size_t k() const { return species.size(); }

    static ForceField coulomb_only(const std::vector<std::string>& labels,
                                   const std::vector<double>& qs) {
        ForceField ff;
        ff.species = labels;
        ff.charges = qs;
        ff.pairs.assign(labels.size() * labels.size(), BuckinghamParams{});
        return ff;
    }

    void set_pair(std::size_t t1, std::size_t t2, BuckinghamParams p) {
        pairs[t1 * k() + t2] = p;
        pairs[t2 * k() + t1] = p;
    }

    const BuckinghamParams& pair(std::size_t t1, std::size_t t2) const {
        const auto& p = pairs[t1 * k() + t2];
        require(p.has_value(), "force field is missing parameters for species pair " +
                                   species[t1] + "-" + species[t2]);
        return *p;
    }

    int species_index(const std::string& label) const {
        for (std::size_t i = 0; i < species.size(); ++i)
            if (species[i] == label) return static_cast<int>(i);
        return -1;
    }
};

// Pairwise interaction table over placements. Entry (a, b) with a = t1*n+p1,
// b = t2*n+p2 holds half the ordered-pair energy for p1 != p2, the full
// per-placement constant on the diagonal, and zero whenever either side is
// void or the positions coincide with different species. The table is
// symmetric, so E(X) = vec(X)^T Q vec(X) counts every pair exactly once.
struct QTable {
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<double> q;
    std::string provenance;

    QTable() = default;
    QTable(std::size_t n_, std::size_t k_) : n(n_), k(k_), q(n_ * (k_ + 1) * n_ * (k_ + 1), 0.0) {}

    std::size_t dim() const { return n * (k + 1); }
    double entry(std::size_t a, std::size_t b) const { return q[a * dim() + b]; }
    double& at(std::size_t a, std::size_t b) { return q[a * dim() + b]; }
};

// Largest placement-matrix dimension that is materialized densely.
inline constexpr std::size_t dense_q_limit = 4096;

// Shared translation-invariant kernels on a uniform grid: the Coulomb pair
// kernel and the Buckingham image sums depend on the wrapped integer offset
// between two grid positions only, so one table of g^3 values per quantity
// covers every pair.
struct QKernels {
    std::size_t n = 0;
    std::size_t k = 0;
    GridSpec grid;
    std::vector<double> charges;      // per real species
    std::vector<double> coul;         // offset -> k_e * (real + recip), full pair term
    std::vector<std::vector<double>> buck; // species pair (t1*k+t2) -> offset table
    std::vector<double> diag;         // per species: self Coulomb + half own-image Buckingham

    std::size_t dim() const { return n * (k + 1); }

    std::size_t offset_index(std::size_t p1, std::size_t p2) const {
        auto c1 = grid.coords(p1);
        auto c2 = grid.coords(p2);
        return grid.index(c1[0] - c2[0], c1[1] - c2[1], c1[2] - c2[2]);
    }

    double entry(std::size_t a, std::size_t b) const {
        std::size_t t1 = a / n, t2 = b / n;
        if (t1 >= k || t2 >= k) return 0.0;
        std::size_t p1 = a % n, p2 = b % n;
        if (p1 == p2) return t1 == t2 ? diag[t1] : 0.0;
        std::size_t d = offset_index(p1, p2);
        return 0.5 * (charges[t1] * charges[t2] * coul[d] + buck[t1 * k + t2][d]);
    }
};

inline QKernels build_kernels(const PositionSet& positions, const UnitCell& cell,
                              const SpeciesSet& species, const ForceField& ff,
                              std::optional<EwaldParams> ew_opt = std::nullopt) {
    species.validate(positions.frac.size());
    require(ff.k() >= 1, "force field has no species");

    QKernels kn;
    kn.n = positions.frac.size();
    kn.k = species.k();
    kn.grid = positions.grid;

    // Species charges come from the force field when it defines the label,
    // from the composition otherwise.
    std::vector<int> ff_index(kn.k, -1);
    kn.charges.resize(kn.k);
    for (std::size_t t = 0; t < kn.k; ++t) {
        int fi = ff.species_index(species.labels[t]);
        ff_index[t] = fi;
        kn.charges[t] = fi >= 0 ? ff.charges[fi] : species.charges[t];
    }

    double net = 0.0;
    for (std::size_t t = 0; t < kn.k; ++t) net += kn.charges[t] * double(species.counts[t]);
    require(std::abs(net) < 1e-9, "cell is not charge neutral under this force field");

    EwaldParams ew = ew_opt.value_or(EwaldParams::defaults(cell));
    if (ff.alpha_override) ew.alpha = *ff.alpha_override;
    if (ff.k_cut_override) ew.k_cut = *ff.k_cut_override;
    double sr_cut = ff.r_cut_override.value_or(ew.r_cut);
    if (ff.r_cut_override) ew.r_cut = *ff.r_cut_override;
    ew.validate();

    // Buckingham parameters for every species pair must exist, possibly zero.
    std::vector<BuckinghamParams> bp(kn.k * kn.k);
    for (std::size_t t1 = 0; t1 < kn.k; ++t1)
        for (std::size_t t2 = 0; t2 < kn.k; ++t2) {
            int f1 = ff_index[t1], f2 = ff_index[t2];
            require(f1 >= 0 && f2 >= 0, "force field is missing species " +
                                            (f1 < 0 ? species.labels[t1] : species.labels[t2]));
            bp[t1 * kn.k + t2] = ff.pair(static_cast<std::size_t>(f1), static_cast<std::size_t>(f2));
        }

    const std::size_t n = kn.n;
    kn.coul.assign(n, 0.0);
    kn.buck.assign(kn.k * kn.k, std::vector<double>(n, 0.0));

    // The kernel at offset d equals the kernel at the wrapped negation of d,
    // so only the canonical representative is evaluated and the mirror is
    // copied. This also makes the resulting table bitwise symmetric.
    auto negated = [&](std::size_t d) {
        auto c = positions.grid.coords(d);
        return positions.grid.index(-c[0], -c[1], -c[2]);
    };
    auto b = detail::shift_bounds(cell, sr_cut);
    for (std::size_t d = 0; d < n; ++d) {
        const std::size_t dn = negated(d);
        if (dn < d) {
            kn.coul[d] = kn.coul[dn];
            for (std::size_t i = 0; i < kn.k * kn.k; ++i) kn.buck[i][d] = kn.buck[i][dn];
            continue;
        }
        Vec3 df = positions.frac[d]; // offset d has fractional delta equal to position d
        kn.coul[d] = k_coulomb * (detail::ewald_real_sum(cell, df, ew.alpha, ew.r_cut) +
                                  detail::ewald_recip_sum(cell, df, ew.alpha, ew.k_cut));
        for (std::size_t t1 = 0; t1 < kn.k; ++t1)
            for (std::size_t t2 = t1; t2 < kn.k; ++t2) {
                const auto& p = bp[t1 * kn.k + t2];
                if (p.A == 0.0 && p.C == 0.0) continue;
                double tot = 0.0;
                for (int sx = -b[0]; sx <= b[0]; ++sx)
                    for (int sy = -b[1]; sy <= b[1]; ++sy)
                        for (int sz = -b[2]; sz <= b[2]; ++sz) {
                            Vec3 r = cell.cart({df.x + sx, df.y + sy, df.z + sz});
                            double d2 = norm2(r);
                            if (d2 < 1e-20 || d2 > sr_cut * sr_cut) continue;
                            tot += buckingham_pair(std::sqrt(d2), p);
                        }
                kn.buck[t1 * kn.k + t2][d] = tot;
                kn.buck[t2 * kn.k + t1][d] = tot;
            }
    }

    double real0 = detail::ewald_real_sum(cell, {0, 0, 0}, ew.alpha, ew.r_cut);
    double recip0 = detail::ewald_recip_sum(cell, {0, 0, 0}, ew.alpha, ew.k_cut);
    kn.diag.resize(kn.k);
    for (std::size_t t = 0; t < kn.k; ++t) {
        double qc = kn.charges[t];
        kn.diag[t] = k_coulomb * qc * qc *
                         (0.5 * real0 + 0.5 * recip0 - ew.alpha / std::sqrt(std::numbers::pi)) +
                     0.5 * kn.buck[t * kn.k + t][0];
    }
    return kn;
}

// Translation-invariant energy source with O(1) entry evaluation and no
// dense storage. Usable wherever a QTable is.
struct LazyQ {
    QKernels kernels;
    std::size_t n = 0;
    std::size_t k = 0;
    std::string provenance;

    explicit LazyQ(QKernels kn) : kernels(std::move(kn)), n(kernels.n), k(kernels.k) {}

    std::size_t dim() const { return n * (k + 1); }
    double entry(std::size_t a, std::size_t b) const { return kernels.entry(a, b); }
};

inline QTable build_q(const PositionSet& positions, const UnitCell& cell,
                      const SpeciesSet& species, const ForceField& ff,
                      std::optional<EwaldParams> ew = std::nullopt) {
    const std::size_t dim = positions.frac.size() * (species.k() + 1);
    require(dim <= dense_q_limit,
            "dense table dimension " + std::to_string(dim) + " exceeds " +
                std::to_string(dense_q_limit) + ", use the lazy source");
    QKernels kn = build_kernels(positions, cell, species, ff, ew);
    QTable qt(kn.n, kn.k);
    qt.provenance = "built";
    for (std::size_t a = 0; a < qt.dim(); ++a)
        for (std::size_t b = 0; b < qt.dim(); ++b) qt.at(a, b) = kn.entry(a, b);
    return qt;
}

inline LazyQ build_q_lazy(const PositionSet& positions, const UnitCell& cell,
                          const SpeciesSet& species, const ForceField& ff,
                          std::optional<EwaldParams> ew = std::nullopt) {
    LazyQ lz(build_kernels(positions, cell, species, ff, ew));
    lz.provenance = "built-lazy";
    return lz;
}

// Random symmetric table with void rows and columns zero. Entries for
// a <= b over non-void placements are drawn uniformly from [lo, hi] in a
// fixed order and mirrored, so one seed pins the whole table.
inline QTable synth_q(std::size_t n, std::size_t k, std::uint64_t seed, double lo = -1.0,
                      double hi = 1.0) {
    require(n >= 1 && k >= 1, "synth_q needs n >= 1 and k >= 1");
    require(hi >= lo, "synth_q range is empty");
    QTable qt(n, k);
    qt.provenance = "synth seed=" + std::to_string(seed);
    Rng rng(seed);
    const std::size_t real_dim = n * k; // placements below the void block
    for (std::size_t a = 0; a < real_dim; ++a)
        for (std::size_t b = a; b < real_dim; ++b) {
            double v = rng.uniform(lo, hi);
            qt.at(a, b) = v;
            qt.at(b, a) = v;
        }
    return qt;
}

// Sum of table entries over occupied placements, diagonal once and each
// unordered pair twice. Matches vec(X)^T Q vec(X) for the 0/1 matrix of x.
template <class Q>
double energy_hard(const Allocation& x, const Q& q) {
    const std::size_t n = q.n;
    require(x.assign.size() == n, "allocation length does not match table");
    std::vector<std::size_t> occ;
    occ.reserve(n);
    for (std::size_t p = 0; p < n; ++p)
        if (x.assign[p] != static_cast<int>(q.k))
            occ.push_back(placement_index(p, static_cast<std::size_t>(x.assign[p]), n));
    double e = 0.0;
    for (std::size_t i = 0; i < occ.size(); ++i) {
        e += q.entry(occ[i], occ[i]);
        for (std::size_t j = i + 1; j < occ.size(); ++j) e += 2.0 * q.entry(occ[i], occ[j]);
    }
    return e;
}

// Quadratic form vec(S)^T Q vec(S) for a relaxed allocation S (n rows,
// k+1 columns including the void column).
template <class Q>
double energy_soft(const Mat& s, const Q& q) {
    const std::size_t n = q.n, kk = q.k + 1;
    require(s.rows == n && s.cols == kk, "soft allocation shape mismatch");
    std::vector<double> x(q.dim());
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t t = 0; t < kk; ++t) x[placement_index(p, t, n)] = s(p, t);
    double e = 0.0;
    for (std::size_t a = 0; a < x.size(); ++a) {
        if (x[a] == 0.0) continue;
        double row = 0.0;
        for (std::size_t b = 0; b < x.size(); ++b) row += q.entry(a, b) * x[b];
        e += x[a] * row;
    }
    return e;
}

// Gradient of the soft energy: dE/dvec(S) = 2 Q vec(S), returned in the
// same n x (k+1) layout as S.
template <class Q>
Mat energy_soft_grad(const Mat& s, const Q& q) {
    const std::size_t n = q.n, kk = q.k + 1;
    require(s.rows == n && s.cols == kk, "soft allocation shape mismatch");
    std::vector<double> x(q.dim());
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t t = 0; t < kk; ++t) x[placement_index(p, t, n)] = s(p, t);
    Mat g(n, kk, 0.0);
    for (std::size_t a = 0; a < x.size(); ++a) {
        double row = 0.0;
        for (std::size_t b = 0; b < x.size(); ++b) row += q.entry(a, b) * x[b];
        g(a % n, a / n) = 2.0 * row;
    }
    return g;
}

// Single proposed state change. Relocation moves the atom at pos_a to the
// void position pos_b; a swap exchanges the species at two occupied
// positions.
struct Move {
    enum class Kind { relocate, swap_pair };
    Kind kind = Kind::relocate;
    std::size_t pos_a = 0;
    std::size_t pos_b = 0;
};

inline void apply_move(Allocation& x, const Move& mv, std::size_t k) {
    if (mv.kind == Move::Kind::relocate) {
        x.assign[mv.pos_b] = x.assign[mv.pos_a];
        x.assign[mv.pos_a] = static_cast<int>(k);
    } else {
        std::swap(x.assign[mv.pos_a], x.assign[mv.pos_b]);
    }
}

// Energy change of a move in O(occupied) table lookups.
template <class Q>
double delta_energy_move(const Allocation& x, const std::vector<std::size_t>& occupied,
                         const Q& q, const Move& mv) {
    const std::size_t n = q.n;
    const std::size_t kk = q.k;
    if (mv.kind == Move::Kind::relocate) {
        const int t = x.assign[mv.pos_a];
        require(t >= 0 && t < static_cast<int>(kk), "relocation source is not an atom");
        require(x.assign[mv.pos_b] == static_cast<int>(kk), "relocation target is not void");
        const std::size_t a1 = placement_index(mv.pos_a, static_cast<std::size_t>(t), n);
        const std::size_t a2 = placement_index(mv.pos_b, static_cast<std::size_t>(t), n);
        double d = q.entry(a2, a2) - q.entry(a1, a1);
        double cross = 0.0;
        for (std::size_t p : occupied) {
            if (p == mv.pos_a) continue;
            std::size_t b = placement_index(p, static_cast<std::size_t>(x.assign[p]), n);
            cross += q.entry(a2, b) - q.entry(a1, b);
        }
        return d + 2.0 * cross;
    }
    const int ta = x.assign[mv.pos_a];
    const int tb = x.assign[mv.pos_b];
    require(ta >= 0 && ta < static_cast<int>(kk) && tb >= 0 && tb < static_cast<int>(kk),
            "swap requires two occupied positions");
    if (ta == tb) return 0.0;
    const std::size_t a1 = placement_index(mv.pos_a, static_cast<std::size_t>(ta), n);
    const std::size_t b1 = placement_index(mv.pos_b, static_cast<std::size_t>(tb), n);
    const std::size_t a2 = placement_index(mv.pos_a, static_cast<std::size_t>(tb), n);
    const std::size_t b2 = placement_index(mv.pos_b, static_cast<std::size_t>(ta), n);
    double d = q.entry(a2, a2) + q.entry(b2, b2) - q.entry(a1, a1) - q.entry(b1, b1);
    d += 2.0 * q.entry(a2, b2) - 2.0 * q.entry(a1, b1);
    double cross = 0.0;
    for (std::size_t p : occupied) {
        if (p == mv.pos_a || p == mv.pos_b) continue;
        std::size_t c = placement_index(p, static_cast<std::size_t>(x.assign[p]), n);
        cross += q.entry(a2, c) + q.entry(b2, c) - q.entry(a1, c) - q.entry(b1, c);
    }
    return d + 2.0 * cross;
}

template <class Q>
double delta_energy_move(const Allocation& x, const Q& q, const Move& mv) {
    std::vector<std::size_t> occ;
    for (std::size_t p = 0; p < x.assign.size(); ++p)
        if (x.assign[p] != static_cast<int>(q.k)) occ.push_back(p);
    return delta_energy_move(x, occ, q, mv);
}

} // namespace cspalloc
