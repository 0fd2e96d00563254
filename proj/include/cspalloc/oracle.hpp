#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <gmpxx.h>
#include <json.hpp>

#include "common.hpp"
#include "core.hpp"
#include "energy.hpp"

namespace cspalloc {

// Lexicographic successor over a multiset vector, reporting where the
// changed suffix begins so callers can update derived state incrementally.
class EnumCursor {
public:
    explicit EnumCursor(std::vector<int> first) : v_(std::move(first)) {}

    const std::vector<int>& value() const { return v_; }

    // Advance to the next permutation whose pivot lies at index >= floor.
    // Returns false once the suffix v[floor..] is the last permutation.
    bool advance(std::size_t& first_changed, std::size_t floor = 0) {
        if (floor + 1 >= v_.size()) return false;
        std::size_t i = v_.size() - 1;
        while (i > floor && v_[i - 1] >= v_[i]) --i;
        if (i == floor) return false;
        const std::size_t piv = i - 1;
        std::size_t j = v_.size() - 1;
        while (v_[j] <= v_[piv]) --j;
        std::swap(v_[piv], v_[j]);
        std::reverse(v_.begin() + piv + 1, v_.end());
        first_changed = piv;
        return true;
    }

private:
    std::vector<int> v_;
};

// Lexicographically first feasible assignment: species ascending, voids
// (the largest id) at the end.
inline std::vector<int> first_feasible(std::size_t n, const std::vector<long>& counts) {
    std::vector<int> v;
    v.reserve(n);
    long total = 0;
    for (std::size_t t = 0; t < counts.size(); ++t) {
        require(counts[t] >= 0, "species count must be >= 0");
        total += counts[t];
        v.insert(v.end(), counts[t], static_cast<int>(t));
    }
    require(static_cast<std::size_t>(total) <= n, "more atoms than positions");
    v.resize(n, static_cast<int>(counts.size()));
    return v;
}

struct OracleOptions {
    std::uint64_t budget = 1000000000; // refuse state spaces larger than this
    std::size_t threads = 0;           // 0: worker_count()
    std::string cache_path;            // enables the sidecar cache when set
};

struct OracleResult {
    double min_energy = 0.0;
    Allocation argmin;
    std::uint64_t visited = 0;
    double wall_ms = 0.0;
    bool from_cache = false;
    double max_drift = 0.0; // |incremental - recomputed| at each block end
};

namespace detail {

template <class Q>
struct BlockOutcome {
    double min_e = std::numeric_limits<double>::infinity();
    std::vector<int> argmin;
    std::uint64_t visited = 0;
    double drift = 0.0;
};

// Enumerate every permutation of start[floor..] in lexicographic order,
// tracking the energy by suffix differences only. With kept prefix K,
// removed suffix placements R and added suffix placements A, the change is
// 2 B(K, A) - 2 B(K, R) + B(A, A) - B(R, R) for the bilinear form
// B(S, T) = sum_{a in S, b in T} Q(a, b). The running value is never
// re-anchored; the accumulated drift is measured at the end of the block.
template <class Q>
BlockOutcome<Q> enumerate_block(const Q& q, std::vector<int> start, std::size_t floor) {
    const std::size_t n = q.n;
    const int void_id = static_cast<int>(q.k);
    EnumCursor cur(std::move(start));
    std::vector<int> prev = cur.value();

    // sorted occupied positions of the current state
    std::vector<std::size_t> occ;
    for (std::size_t p = 0; p < n; ++p)
        if (prev[p] != void_id) occ.push_back(p);

    BlockOutcome<Q> out;
    double e = energy_hard(Allocation{cur.value()}, q);
    out.min_e = e;
    out.argmin = cur.value();
    out.visited = 1;

    std::vector<std::size_t> added, removed;
    std::size_t s = 0;
    while (cur.advance(s, floor)) {
        const auto& v = cur.value();
        added.clear();
        removed.clear();
        for (std::size_t p = s; p < n; ++p) {
            if (v[p] != void_id) added.push_back(static_cast<std::size_t>(v[p]) * n + p);
            if (prev[p] != void_id) removed.push_back(static_cast<std::size_t>(prev[p]) * n + p);
        }

        double de = 0.0;
        for (std::size_t a : added)
            for (std::size_t b : added) de += q.entry(a, b);
        for (std::size_t a : removed)
            for (std::size_t b : removed) de -= q.entry(a, b);
        for (std::size_t p : occ) {
            if (p >= s) break; // occ is sorted; only the kept prefix counts
            std::size_t ka = static_cast<std::size_t>(v[p]) * n + p;
            for (std::size_t a : added) de += 2.0 * q.entry(ka, a);
            for (std::size_t b : removed) de -= 2.0 * q.entry(ka, b);
        }
        e += de;

        // sync prev and the occupied list with the new suffix
        std::copy(v.begin() + s, v.end(), prev.begin() + s);
        occ.erase(std::lower_bound(occ.begin(), occ.end(), s), occ.end());
        for (std::size_t p = s; p < n; ++p)
            if (v[p] != void_id) occ.push_back(p);

        ++out.visited;
        if (e < out.min_e) {
            out.min_e = e;
            out.argmin = v;
        }
    }
    out.drift = std::abs(e - energy_hard(Allocation{cur.value()}, q));
    return out;
}

// Distinct assignments for the first `depth` positions, in lexicographic
// order. Each one heads an independently enumerable block.
inline void distinct_prefixes(std::vector<long>& remaining, std::size_t depth,
                              std::vector<int>& cur, std::vector<std::vector<int>>& out) {
    if (cur.size() == depth) {
        out.push_back(cur);
        return;
    }
    for (std::size_t t = 0; t < remaining.size(); ++t) {
        if (remaining[t] == 0) continue;
        --remaining[t];
        cur.push_back(static_cast<int>(t));
        distinct_prefixes(remaining, depth, cur, out);
        cur.pop_back();
        ++remaining[t];
    }
}

inline std::vector<std::vector<int>> prefix_blocks(std::size_t n, const std::vector<long>& counts,
                                                   std::size_t target, std::size_t& depth_out) {
    std::vector<long> full(counts.begin(), counts.end());
    long total = 0;
    for (long c : counts) total += c;
    full.push_back(static_cast<long>(n) - total); // void slots
    std::vector<std::vector<int>> blocks{{}};
    std::size_t depth = 0;
    while (blocks.size() < target && depth < std::min<std::size_t>(n, 4)) {
        ++depth;
        blocks.clear();
        std::vector<int> cur;
        std::vector<long> rem = full;
        distinct_prefixes(rem, depth, cur, blocks);
    }
    depth_out = depth;
    return blocks;
}

// Completes a prefix into the lexicographically first state of its block.
inline std::vector<int> block_start(std::size_t n, const std::vector<long>& counts,
                                    const std::vector<int>& prefix) {
    std::vector<long> rem(counts.begin(), counts.end());
    long total = 0;
    for (long c : counts) total += c;
    rem.push_back(static_cast<long>(n) - total);
    for (int t : prefix) --rem[static_cast<std::size_t>(t)];
    std::vector<int> v = prefix;
    for (std::size_t t = 0; t < rem.size(); ++t)
        v.insert(v.end(), rem[t], static_cast<int>(t));
    require(v.size() == n, "prefix does not fit the composition");
    return v;
}

} // namespace detail

// Fingerprint of an interaction table plus composition, for cache keying.
inline std::uint64_t q_fingerprint(const QTable& q, const std::vector<long>& counts) {
    std::uint64_t h = fnv1a64(&q.n, sizeof q.n);
    h = fnv1a64(&q.k, sizeof q.k, h);
    h = fnv1a64(counts.data(), counts.size() * sizeof(long), h);
    return fnv1a64(q.q.data(), q.q.size() * sizeof(double), h);
}

inline std::uint64_t q_fingerprint(const LazyQ& q, const std::vector<long>& counts) {
    std::uint64_t h = fnv1a64(&q.n, sizeof q.n);
    h = fnv1a64(&q.k, sizeof q.k, h);
    h = fnv1a64(counts.data(), counts.size() * sizeof(long), h);
    h = fnv1a64(q.kernels.charges.data(), q.kernels.charges.size() * sizeof(double), h);
    h = fnv1a64(q.kernels.coul.data(), q.kernels.coul.size() * sizeof(double), h);
    for (const auto& tbl : q.kernels.buck) h = fnv1a64(tbl.data(), tbl.size() * sizeof(double), h);
    return fnv1a64(q.kernels.diag.data(), q.kernels.diag.size() * sizeof(double), h);
}

namespace detail {

inline std::string hex_key(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::optional<OracleResult> cache_lookup(const std::string& path, std::uint64_t key) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt; // unreadable cache is treated as absent
    }
    if (!j.contains("entries")) return std::nullopt;
    auto it = j["entries"].find(hex_key(key));
    if (it == j["entries"].end()) return std::nullopt;
    try {
        OracleResult r;
        r.min_energy = (*it)["min_energy"].get<double>();
        r.argmin.assign = (*it)["argmin"].get<std::vector<int>>();
        r.visited = (*it)["visited"].get<std::uint64_t>();
        r.from_cache = true;
        return r;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
}

inline void cache_store(const std::string& path, std::uint64_t key, const OracleResult& r) {
    nlohmann::json j;
    {
        std::ifstream in(path);
        if (in) {
            try {
                in >> j;
            } catch (const nlohmann::json::exception&) {
                j = nlohmann::json::object();
            }
        }
    }
    if (!j.is_object()) j = nlohmann::json::object();
    if (!j.contains("version")) j["version"] = 1;
    j["entries"][hex_key(key)] = {{"min_energy", r.min_energy},
                                  {"argmin", r.argmin.assign},
                                  {"visited", r.visited}};
    std::ofstream out(path);
    require(bool(out), "cannot write oracle cache: " + path);
    out << j.dump(1) << "\n";
}

} // namespace detail

// Exhaustive search over every feasible allocation in lexicographic order.
// Refuses state spaces larger than the budget, enumerates with incremental
// suffix energy updates, and reports the recomputed energy of the first
// state attaining the minimum. Ties on the (deterministic) incremental
// value keep the lexicographically earliest state.
template <class Q>
OracleResult brute_force_min(const Q& q, const std::vector<long>& counts,
                             const OracleOptions& opts = {}) {
    auto t_start = std::chrono::steady_clock::now();
    mpz_class space = count_feasible(q.n, counts);
    mpz_class budget_z(static_cast<unsigned long>(opts.budget));
    require(space <= budget_z, "state space of " + space.get_str() +
                                   " allocations exceeds the budget of " + budget_z.get_str());

    std::uint64_t key = 0;
    if (!opts.cache_path.empty()) {
        key = q_fingerprint(q, counts);
        if (auto hit = detail::cache_lookup(opts.cache_path, key)) {
            hit->wall_ms = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - t_start)
                               .count();
            return *hit;
        }
    }

    std::size_t threads = opts.threads ? opts.threads : worker_count();
    std::size_t depth = 0;
    auto prefixes = detail::prefix_blocks(q.n, counts, threads <= 1 ? 1 : 4 * threads, depth);

    std::vector<detail::BlockOutcome<Q>> outs(prefixes.size());
    std::size_t next = 0;
    while (next < prefixes.size()) {
        std::size_t batch = std::min(threads, prefixes.size() - next);
        std::vector<std::future<detail::BlockOutcome<Q>>> fut;
        fut.reserve(batch);
        for (std::size_t i = 0; i < batch; ++i)
            fut.push_back(std::async(std::launch::async, [&, idx = next + i] {
                return detail::enumerate_block(
                    q, detail::block_start(q.n, counts, prefixes[idx]), depth);
            }));
        for (std::size_t i = 0; i < batch; ++i) outs[next + i] = fut[i].get();
        next += batch;
    }

    OracleResult res;
    res.min_energy = std::numeric_limits<double>::infinity();
    for (const auto& o : outs) {
        res.visited += o.visited;
        res.max_drift = std::max(res.max_drift, o.drift);
        if (o.min_e < res.min_energy) { // blocks are in lexicographic order
            res.min_energy = o.min_e;
            res.argmin.assign = o.argmin;
        }
    }
    if (mpz_class(static_cast<unsigned long>(res.visited)) != space)
        throw NumericError("enumeration visited " + std::to_string(res.visited) + " of " +
                           space.get_str() + " states");
    res.min_energy = energy_hard(res.argmin, q);

    if (!opts.cache_path.empty()) detail::cache_store(opts.cache_path, key, res);
    res.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
            .count();
    return res;
}

struct ArgmaxResult {
    double score = 0.0;
    Allocation argmax;
    std::uint64_t visited = 0;
};

// Exhaustive maximizer of the linear score sum_p H(p, assign[p]) over
// feasible allocations, void column included. Ties keep the
// lexicographically earliest state. The score is linear, so the suffix
// delta is exact and drift-free.
inline ArgmaxResult vertex_argmax(const Mat& h, const std::vector<long>& counts,
                                  std::uint64_t budget = 1000000) {
    const std::size_t n = h.rows;
    require(h.cols == counts.size() + 1, "score matrix must have k+1 columns");
    mpz_class space = count_feasible(n, counts);
    mpz_class budget_z(static_cast<unsigned long>(budget));
    require(space <= budget_z, "state space of " + space.get_str() +
                                   " allocations exceeds the budget of " + budget_z.get_str());

    EnumCursor cur(first_feasible(n, counts));
    std::vector<int> prev = cur.value();
    double score = 0.0;
    for (std::size_t p = 0; p < n; ++p) score += h(p, static_cast<std::size_t>(prev[p]));

    ArgmaxResult res;
    res.score = score;
    res.argmax.assign = cur.value();
    res.visited = 1;

    std::size_t s = 0;
    while (cur.advance(s)) {
        const auto& v = cur.value();
        for (std::size_t p = s; p < n; ++p) {
            score += h(p, static_cast<std::size_t>(v[p])) - h(p, static_cast<std::size_t>(prev[p]));
        }
        std::copy(v.begin() + s, v.end(), prev.begin() + s);
        ++res.visited;
        if (score > res.score) {
            res.score = score;
            res.argmax.assign = v;
        }
    }
    if (mpz_class(static_cast<unsigned long>(res.visited)) != space)
        throw NumericError("enumeration visited " + std::to_string(res.visited) + " of " +
                           space.get_str() + " states");
    return res;
}

} // namespace cspalloc
