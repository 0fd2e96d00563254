#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"
#include "core.hpp"
#include "energy.hpp"
#include "rng.hpp"

namespace cspalloc {

// Mix of move kinds drawn by the samplers. p_relocate = 1 proposes only
// relocations, 0 only swaps; impossible draws fall back to the other kind
// and are counted.
struct MoveStrategy {
    double p_relocate = 1.0;

    void validate() const {
        require(p_relocate >= 0.0 && p_relocate <= 1.0, "p_relocate must be in [0,1]");
    }
};

// Metropolis acceptance test. Downhill moves always pass; uphill moves
// pass when u < exp(-(E_new - E)/T) for u drawn uniformly from [0,1).
inline bool metropolis_accept(double e, double e_new, double t, double u) {
    if (!(t > 0.0)) throw NumericError("metropolis temperature must be > 0");
    if (e_new < e) return true;
    return u < std::exp(-(e_new - e) / t);
}

// Incremental bookkeeping for move sampling: occupied and void position
// lists with O(1) removal, plus per-species occupancy counts.
class MovePicker {
public:
    MovePicker(const Allocation& x, std::size_t k) {
        species_count_.assign(k, 0);
        slot_.assign(x.n(), 0);
        for (std::size_t p = 0; p < x.n(); ++p) {
            if (x.assign[p] == static_cast<int>(k)) {
                slot_[p] = voids_.size();
                voids_.push_back(p);
            } else {
                slot_[p] = occ_.size();
                occ_.push_back(p);
                ++species_count_[x.assign[p]];
            }
        }
    }

    const std::vector<std::size_t>& occupied() const { return occ_; }
    std::size_t void_count() const { return voids_.size(); }
    std::uint64_t relocate_fallbacks = 0;
    std::uint64_t swap_fallbacks = 0;

    bool swap_possible() const {
        std::size_t distinct = 0;
        for (long c : species_count_)
            if (c > 0) ++distinct;
        return distinct >= 2;
    }

    Move propose(const Allocation& x, const MoveStrategy& strategy, Rng& rng) {
        strategy.validate();
        require(!occ_.empty(), "no atoms to move");
        bool relocate = strategy.p_relocate >= 1.0
                            ? true
                            : (strategy.p_relocate <= 0.0 ? false
                                                          : rng.uniform01() < strategy.p_relocate);
        if (relocate && voids_.empty()) {
            if (!swap_possible()) throw NumericError("no feasible move: no voids and one species");
            ++relocate_fallbacks;
            relocate = false;
        } else if (!relocate && !swap_possible()) {
            if (voids_.empty()) throw NumericError("no feasible move: no voids and one species");
            ++swap_fallbacks;
            relocate = true;
        }

        Move mv;
        if (relocate) {
            mv.kind = Move::Kind::relocate;
            mv.pos_a = occ_[rng.uniform_int(occ_.size())];
            mv.pos_b = voids_[rng.uniform_int(voids_.size())];
            return mv;
        }
        mv.kind = Move::Kind::swap_pair;
        for (int tries = 0; tries < 4096; ++tries) {
            std::size_t i = occ_[rng.uniform_int(occ_.size())];
            std::size_t j = occ_[rng.uniform_int(occ_.size())];
            if (i != j && x.assign[i] != x.assign[j]) {
                mv.pos_a = i;
                mv.pos_b = j;
                return mv;
            }
        }
        // deterministic fallback after bounded rejection sampling
        for (std::size_t j = 1; j < occ_.size(); ++j)
            if (x.assign[occ_[j]] != x.assign[occ_[0]]) {
                mv.pos_a = occ_[0];
                mv.pos_b = occ_[j];
                return mv;
            }
        throw NumericError("swap sampling failed despite two species being present");
    }

    // Keep the caches aligned with an applied move. Swaps change neither
    // list membership nor species counts; relocations move one position
    // between the occupied and void lists.
    void applied(const Move& mv) {
        if (mv.kind != Move::Kind::relocate) return;
        std::size_t ia = slot_[mv.pos_a];
        occ_[ia] = occ_.back();
        slot_[occ_[ia]] = ia;
        occ_.pop_back();
        std::size_t ib = slot_[mv.pos_b];
        voids_[ib] = voids_.back();
        slot_[voids_[ib]] = ib;
        voids_.pop_back();
        slot_[mv.pos_b] = occ_.size();
        occ_.push_back(mv.pos_b);
        slot_[mv.pos_a] = voids_.size();
        voids_.push_back(mv.pos_a);
    }

private:
    std::vector<std::size_t> occ_;
    std::vector<std::size_t> voids_;
    std::vector<long> species_count_;
    std::vector<std::size_t> slot_; // position -> index in its current list
};

// One-off proposal without persistent state; scans X on every call.
inline Move propose_move(const Allocation& x, std::size_t k, const MoveStrategy& strategy,
                         Rng& rng) {
    MovePicker picker(x, k);
    return picker.propose(x, strategy, rng);
}

struct TraceRow {
    std::array<double, 5> v{};
};

struct SolveResult {
    std::string solver;
    std::uint64_t seed = 0;
    double best_energy = 0.0;
    Allocation best_allocation;
    std::uint64_t step_of_best = 0;
    bool feasible = true;
    std::vector<std::string> trace_columns;
    std::vector<TraceRow> trace;
    double wall_ms = 0.0;
    std::uint64_t proposed = 0;
    std::uint64_t accepted = 0;
    std::uint64_t relocate_fallbacks = 0;
    std::uint64_t swap_fallbacks = 0;
    double final_temperature = 0.0;
};

struct GreedyConfig {
    std::uint64_t max_iter = 200000;
    MoveStrategy strategy;
    std::size_t trace_points = 1000;
};

struct SAConfig {
    std::optional<double> t0;      // estimated from move statistics when unset
    double t_min_factor = 1e-3;    // T_min = factor * T0
    double cool_alpha = 0.95;      // multiplicative cooling
    int sweeps_per_cool = 5;       // cool every sweeps_per_cool * n iterations
    std::uint64_t max_iter = 200000;
    MoveStrategy strategy;
    std::size_t trace_points = 1000;

    void validate() const {
        require(cool_alpha > 0.0 && cool_alpha < 1.0, "cooling factor must be in (0,1)");
        require(sweeps_per_cool >= 1, "sweeps_per_cool must be >= 1");
        require(t_min_factor > 0.0 && t_min_factor <= 1.0, "t_min_factor must be in (0,1]");
        if (t0) require(*t0 > 0.0, "initial temperature must be > 0");
        strategy.validate();
    }
};

namespace detail {

inline std::uint64_t trace_stride(std::uint64_t max_iter, std::size_t points) {
    return std::max<std::uint64_t>(1, max_iter / std::max<std::size_t>(1, points));
}

// Consistency guard: the incrementally tracked energy must agree with a
// full recomputation of the reported best state.
template <class Q>
void verify_energy(const Allocation& best, const Q& q, double& tracked) {
    double fresh = energy_hard(best, q);
    if (std::abs(fresh - tracked) > 1e-6)
        throw NumericError("incremental energy drifted from recomputation by " +
                           std::to_string(std::abs(fresh - tracked)));
    tracked = fresh;
}

} // namespace detail

// Strict-descent local search: random feasible start, random moves,
// accept only energy-lowering ones. The trace of accepted energies is
// monotone by construction.
template <class Q>
SolveResult greedy_solve(const Q& q, const std::vector<long>& counts, const GreedyConfig& cfg,
                         std::uint64_t seed) {
    cfg.strategy.validate();
    auto t_start = std::chrono::steady_clock::now();
    Rng rng(seed);
    Allocation x = random_feasible(q.n, counts, rng);
    MovePicker picker(x, q.k);
    double e = energy_hard(x, q);

    SolveResult res;
    res.solver = "greedy";
    res.seed = seed;
    res.trace_columns = {"step", "current_e", "best_e", "temperature"};
    res.best_allocation = x;
    res.best_energy = e;
    res.step_of_best = 0;

    const std::uint64_t stride = detail::trace_stride(cfg.max_iter, cfg.trace_points);
    for (std::uint64_t it = 1; it <= cfg.max_iter; ++it) {
        Move mv = picker.propose(x, cfg.strategy, rng);
        ++res.proposed;
        double de = delta_energy_move(x, picker.occupied(), q, mv);
        if (de < 0.0) {
            apply_move(x, mv, q.k);
            picker.applied(mv);
            e += de;
            ++res.accepted;
            res.best_energy = e;
            res.best_allocation = x;
            res.step_of_best = it;
        }
        if (it % stride == 0 || it == cfg.max_iter)
            res.trace.push_back({{double(it), e, res.best_energy, 0.0}});
    }
    res.relocate_fallbacks = picker.relocate_fallbacks;
    res.swap_fallbacks = picker.swap_fallbacks;
    detail::verify_energy(res.best_allocation, q, res.best_energy);
    res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                            t_start)
                      .count();
    return res;
}

// Estimate a starting temperature as the standard deviation of move energy
// changes along a short unconditional random walk from the given state.
template <class Q>
double estimate_t0(const Q& q, const Allocation& start, const MoveStrategy& strategy,
                   std::uint64_t seed, std::size_t samples = 1000) {
    Rng rng(seed);
    Allocation x = start;
    MovePicker picker(x, q.k);
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        Move mv = picker.propose(x, strategy, rng);
        double de = delta_energy_move(x, picker.occupied(), q, mv);
        sum += de;
        sum2 += de * de;
        apply_move(x, mv, q.k);
        picker.applied(mv);
    }
    double mean = sum / double(samples);
    double var = std::max(0.0, sum2 / double(samples) - mean * mean);
    double sd = std::sqrt(var);
    return sd > 1e-12 ? sd : 1.0;
}

// Simulated annealing with Metropolis acceptance and multiplicative
// cooling every sweeps_per_cool * n proposals.
template <class Q>
SolveResult sa_solve(const Q& q, const std::vector<long>& counts, const SAConfig& cfg,
                     std::uint64_t seed) {
    cfg.validate();
    auto t_start = std::chrono::steady_clock::now();
    Rng rng(seed);
    Allocation x = random_feasible(q.n, counts, rng);
    MovePicker picker(x, q.k);
    double e = energy_hard(x, q);

    // the estimation walk runs on a private stream so a supplied t0 and an
    // estimated one leave the annealing trajectory identical
    double t0 = cfg.t0 ? *cfg.t0 : estimate_t0(q, x, cfg.strategy, splitmix64(seed) + 1);
    const double t_min = cfg.t_min_factor * t0;
    double t = t0;

    SolveResult res;
    res.solver = "sa";
    res.seed = seed;
    res.trace_columns = {"step", "current_e", "best_e", "temperature"};
    res.best_allocation = x;
    res.best_energy = e;
    res.step_of_best = 0;

    const std::uint64_t cool_every = std::max<std::uint64_t>(1, cfg.sweeps_per_cool * q.n);
    const std::uint64_t stride = detail::trace_stride(cfg.max_iter, cfg.trace_points);
    for (std::uint64_t it = 1; it <= cfg.max_iter; ++it) {
        Move mv = picker.propose(x, cfg.strategy, rng);
        ++res.proposed;
        double de = delta_energy_move(x, picker.occupied(), q, mv);
        double u = rng.uniform01();
        if (metropolis_accept(e, e + de, t, u)) {
            apply_move(x, mv, q.k);
            picker.applied(mv);
            e += de;
            ++res.accepted;
            if (e < res.best_energy) {
                res.best_energy = e;
                res.best_allocation = x;
                res.step_of_best = it;
            }
        }
        if (it % cool_every == 0) t = std::max(t * cfg.cool_alpha, t_min);
        if (it % stride == 0 || it == cfg.max_iter)
            res.trace.push_back({{double(it), e, res.best_energy, t}});
    }
    res.final_temperature = t;
    res.relocate_fallbacks = picker.relocate_fallbacks;
    res.swap_fallbacks = picker.swap_fallbacks;
    detail::verify_energy(res.best_allocation, q, res.best_energy);
    res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                            t_start)
                      .count();
    return res;
}

struct MultiShotResult {
    std::vector<SolveResult> shots;
    std::size_t best_index = 0;

    const SolveResult& best() const { return shots[best_index]; }
};

// Run one solver callable per seed, in parallel up to `threads` workers.
// Each shot is seeded independently, so results do not depend on the
// worker count or scheduling.
template <class Fn>
MultiShotResult run_shots(Fn&& shot_fn, const std::vector<std::uint64_t>& seeds,
                          std::size_t threads = 0) {
    require(!seeds.empty(), "at least one seed required");
    if (threads == 0) threads = worker_count();
    MultiShotResult out;
    out.shots.resize(seeds.size());
    std::size_t next = 0;
    while (next < seeds.size()) {
        std::size_t batch = std::min(threads, seeds.size() - next);
        std::vector<std::future<SolveResult>> fut;
        fut.reserve(batch);
        for (std::size_t i = 0; i < batch; ++i)
            fut.push_back(std::async(std::launch::async,
                                     [&, idx = next + i] { return shot_fn(seeds[idx]); }));
        for (std::size_t i = 0; i < batch; ++i) out.shots[next + i] = fut[i].get();
        next += batch;
    }
    for (std::size_t i = 1; i < out.shots.size(); ++i)
        if (out.shots[i].best_energy < out.shots[out.best_index].best_energy) out.best_index = i;
    return out;
}

} // namespace cspalloc
