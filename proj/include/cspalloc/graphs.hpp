#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "core.hpp"
#include "rng.hpp"

namespace cspalloc {

// Undirected computational graph over grid positions. Edges are canonical
// (u < v), sorted, and unique; adjacency is materialized as CSR once the
// edge list is final. Optional per-edge feature vectors align with edges.
struct CompGraph {
    std::size_t n_nodes = 0;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    std::vector<std::vector<double>> edge_feat;
    std::size_t feat_species = 0; // k+1 when features are attached
    std::string kind;
    int g = 0;
    std::vector<std::string> warnings;

    std::vector<std::uint32_t> adj_offsets;
    std::vector<std::uint32_t> adj_list;

    void finalize() {
        for (auto& e : edges)
            if (e.first > e.second) std::swap(e.first, e.second);
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        adj_offsets.assign(n_nodes + 1, 0);
        for (auto& e : edges) {
            ++adj_offsets[e.first + 1];
            ++adj_offsets[e.second + 1];
        }
        for (std::size_t i = 1; i <= n_nodes; ++i) adj_offsets[i] += adj_offsets[i - 1];
        adj_list.resize(2 * edges.size());
        std::vector<std::uint32_t> cursor(adj_offsets.begin(), adj_offsets.end() - 1);
        for (auto& e : edges) {
            adj_list[cursor[e.first]++] = e.second;
            adj_list[cursor[e.second]++] = e.first;
        }
        for (std::size_t u = 0; u < n_nodes; ++u)
            std::sort(adj_list.begin() + adj_offsets[u], adj_list.begin() + adj_offsets[u + 1]);
    }

    std::size_t degree(std::size_t u) const { return adj_offsets[u + 1] - adj_offsets[u]; }

    std::vector<std::uint32_t> neighbors(std::size_t u) const {
        return {adj_list.begin() + adj_offsets[u], adj_list.begin() + adj_offsets[u + 1]};
    }
};

namespace detail {

template <class NeighborGen>
CompGraph build_expander(int g, const std::string& kind, NeighborGen&& gen) {
    require(g >= 2, kind + " graph needs g >= 2");
    GridSpec grid{g};
    CompGraph cg;
    cg.n_nodes = grid.n();
    cg.kind = kind;
    cg.g = g;
    cg.edges.reserve(cg.n_nodes * 24);
    for (std::size_t p = 0; p < cg.n_nodes; ++p) {
        auto c = grid.coords(p);
        for (const auto& nb : gen(c[0], c[1], c[2])) {
            std::size_t q = grid.index(nb[0], nb[1], nb[2]);
            if (q == p) continue;
            cg.edges.emplace_back(static_cast<std::uint32_t>(std::min(p, q)),
                                  static_cast<std::uint32_t>(std::max(p, q)));
        }
    }
    cg.finalize();
    return cg;
}

} // namespace detail

// 3D Gabber-Galil expander: the two-coordinate neighbor formulas
// (a, b+-2a), (a, b+-(2a+1)), (a+-2b, b), (a+-(2b+1), b) applied to the
// xy, yz and xz coordinate planes, 24 raw neighbors per vertex mod g.
inline CompGraph gabber_galil_3d(int g) {
    return detail::build_expander(g, "gg3d", [](int x, int y, int z) {
        return std::array<std::array<int, 3>, 24>{{
            {x, y + 2 * x, z},       {x, y - 2 * x, z},
            {x, y + 2 * x + 1, z},   {x, y - (2 * x + 1), z},
            {x + 2 * y, y, z},       {x - 2 * y, y, z},
            {x + 2 * y + 1, y, z},   {x - (2 * y + 1), y, z},
            {x, y + 2 * z, z},       {x, y - 2 * z, z},
            {x, y + 2 * z + 1, z},   {x, y - (2 * z + 1), z},
            {x, y, z + 2 * y},       {x, y, z - 2 * y},
            {x, y, z + 2 * y + 1},   {x, y, z - (2 * y + 1)},
            {x + 2 * z, y, z},       {x - 2 * z, y, z},
            {x + 2 * z + 1, y, z},   {x - (2 * z + 1), y, z},
            {x, y, z + 2 * x},       {x, y, z - 2 * x},
            {x, y, z + 2 * x + 1},   {x, y, z - (2 * x + 1)},
        }};
    });
}

// 3D Margulis-style graph: the two-coordinate formulas (a+-1, b), (a, b+-1),
// (a+-b, b), (a, b+-a) applied to the xy, yz and xz planes, mod g.
inline CompGraph margulis_3d(int g) {
    return detail::build_expander(g, "margulis3d", [](int x, int y, int z) {
        return std::array<std::array<int, 3>, 24>{{
            {x + 1, y, z}, {x - 1, y, z}, {x, y + 1, z}, {x, y - 1, z},
            {x + y, y, z}, {x - y, y, z}, {x, y + x, z}, {x, y - x, z},
            {x, y + 1, z}, {x, y - 1, z}, {x, y, z + 1}, {x, y, z - 1},
            {x, y + z, z}, {x, y - z, z}, {x, y, z + y}, {x, y, z - y},
            {x + 1, y, z}, {x - 1, y, z}, {x, y, z + 1}, {x, y, z - 1},
            {x + z, y, z}, {x - z, y, z}, {x, y, z + x}, {x, y, z - x},
        }};
    });
}

// Periodic radius-cutoff graph: candidates within min-image distance r_cut,
// the k_nn nearest kept per node (ties broken by lower index), then the
// directed selections are unioned. Nodes with no candidate in range are
// left isolated and recorded as warnings.
inline CompGraph radius_cutoff_graph(const PositionSet& positions, const UnitCell& cell,
                                     double r_cut, int k_nn) {
    require(r_cut > 0.0, "radius cutoff must be > 0");
    require(k_nn >= 1, "nearest-neighbor count must be >= 1");
    CompGraph cg;
    cg.n_nodes = positions.frac.size();
    cg.kind = "cutoff";
    cg.g = positions.grid.g;
    std::vector<std::pair<double, std::uint32_t>> cand;
    for (std::size_t u = 0; u < cg.n_nodes; ++u) {
        cand.clear();
        for (std::size_t v = 0; v < cg.n_nodes; ++v) {
            if (v == u) continue;
            double d = min_image_distance(cell, positions.frac[u], positions.frac[v]);
            if (d <= r_cut) cand.emplace_back(d, static_cast<std::uint32_t>(v));
        }
        if (cand.empty()) {
            cg.warnings.push_back("node " + std::to_string(u) + " has no neighbor within " +
                                  std::to_string(r_cut));
            continue;
        }
        std::sort(cand.begin(), cand.end());
        const std::size_t keep = std::min<std::size_t>(cand.size(), k_nn);
        for (std::size_t i = 0; i < keep; ++i) {
            std::uint32_t v = cand[i].second;
            cg.edges.emplace_back(std::min<std::uint32_t>(u, v), std::max<std::uint32_t>(u, v));
        }
    }
    cg.finalize();
    return cg;
}

inline CompGraph complete_graph(std::size_t n) {
    CompGraph cg;
    cg.n_nodes = n;
    cg.kind = "complete";
    for (std::uint32_t u = 0; u < n; ++u)
        for (std::uint32_t v = u + 1; v < n; ++v) cg.edges.emplace_back(u, v);
    cg.finalize();
    return cg;
}

// Per-edge interaction features: edge (u, v) with u < v carries the
// (k+1)^2 vector F[t1*(k+1)+t2] = alpha((u,t1),(v,t2)) row-major. The
// reverse direction reads the transpose, which equals the stored block
// because the table is symmetric.
template <class Q>
void attach_edge_features(CompGraph& g, const Q& q) {
    require(g.n_nodes == q.n, "graph node count does not match table positions");
    const std::size_t kk = q.k + 1;
    g.feat_species = kk;
    g.edge_feat.assign(g.edges.size(), std::vector<double>(kk * kk, 0.0));
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        auto [u, v] = g.edges[e];
        auto& f = g.edge_feat[e];
        for (std::size_t t1 = 0; t1 < kk; ++t1)
            for (std::size_t t2 = 0; t2 < kk; ++t2)
                f[t1 * kk + t2] = q.entry(placement_index(u, t1, q.n), placement_index(v, t2, q.n));
    }
}

struct GraphStats {
    std::size_t nodes = 0;
    std::size_t edges = 0;
    std::size_t deg_min = 0;
    std::size_t deg_max = 0;
    double deg_mean = 0.0;
    std::size_t components = 0;
    std::size_t diameter_estimate = 0; // max BFS eccentricity over sampled sources
    bool spectral_available = false;
    double spectral_gap = 0.0; // 1 - max |nonprincipal eigenvalue| of D^-1/2 A D^-1/2
    int spectral_iterations = 0;
};

namespace detail {

// BFS eccentricity of one source; unreachable nodes are skipped.
inline std::size_t bfs_eccentricity(const CompGraph& g, std::size_t src,
                                    std::vector<int>& dist) {
    dist.assign(g.n_nodes, -1);
    std::deque<std::uint32_t> q{static_cast<std::uint32_t>(src)};
    dist[src] = 0;
    std::size_t ecc = 0;
    while (!q.empty()) {
        std::uint32_t u = q.front();
        q.pop_front();
        ecc = std::max(ecc, static_cast<std::size_t>(dist[u]));
        for (std::size_t i = g.adj_offsets[u]; i < g.adj_offsets[u + 1]; ++i) {
            std::uint32_t v = g.adj_list[i];
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    return ecc;
}

} // namespace detail

// Size cap for the power-iteration spectral estimate.
inline constexpr std::size_t spectral_node_limit = 4096;

inline GraphStats graph_stats(const CompGraph& g) {
    GraphStats st;
    st.nodes = g.n_nodes;
    st.edges = g.edges.size();
    if (g.n_nodes == 0) return st;

    st.deg_min = g.n_nodes;
    for (std::size_t u = 0; u < g.n_nodes; ++u) {
        std::size_t d = g.degree(u);
        st.deg_min = std::min(st.deg_min, d);
        st.deg_max = std::max(st.deg_max, d);
        st.deg_mean += double(d);
    }
    st.deg_mean /= double(g.n_nodes);

    // components and a diameter lower bound from sampled BFS sources
    std::vector<int> dist;
    std::vector<char> seen(g.n_nodes, 0);
    for (std::size_t u = 0; u < g.n_nodes; ++u) {
        if (seen[u]) continue;
        ++st.components;
        detail::bfs_eccentricity(g, u, dist);
        for (std::size_t v = 0; v < g.n_nodes; ++v)
            if (dist[v] >= 0) seen[v] = 1;
    }
    const std::size_t samples = std::min<std::size_t>(g.n_nodes, 64);
    const std::size_t stride = std::max<std::size_t>(1, g.n_nodes / samples);
    for (std::size_t u = 0; u < g.n_nodes; u += stride)
        st.diameter_estimate = std::max(st.diameter_estimate, detail::bfs_eccentricity(g, u, dist));

    if (g.n_nodes <= spectral_node_limit && !g.edges.empty()) {
        // power iteration on the normalized adjacency, deflating the
        // principal direction D^{1/2} 1
        const std::size_t n = g.n_nodes;
        std::vector<double> isqrt(n, 0.0), v1(n, 0.0);
        double v1n = 0.0;
        for (std::size_t u = 0; u < n; ++u) {
            double d = double(g.degree(u));
            if (d > 0) {
                isqrt[u] = 1.0 / std::sqrt(d);
                v1[u] = std::sqrt(d);
                v1n += d;
            }
        }
        v1n = std::sqrt(v1n);
        for (auto& x : v1) x /= v1n;

        Rng rng(12345);
        std::vector<double> x(n), y(n);
        for (auto& xi : x) xi = rng.uniform01() - 0.5;
        auto deflate = [&](std::vector<double>& w) {
            double proj = 0.0;
            for (std::size_t u = 0; u < n; ++u) proj += w[u] * v1[u];
            for (std::size_t u = 0; u < n; ++u) w[u] -= proj * v1[u];
        };
        auto normalize = [&](std::vector<double>& w) {
            double s = 0.0;
            for (double wi : w) s += wi * wi;
            s = std::sqrt(s);
            if (s > 0)
                for (auto& wi : w) wi /= s;
            return s;
        };
        deflate(x);
        normalize(x);
        double lambda = 0.0;
        for (int it = 0; it < 2000; ++it) {
            std::fill(y.begin(), y.end(), 0.0);
            for (const auto& e : g.edges) {
                double w = isqrt[e.first] * isqrt[e.second];
                y[e.first] += w * x[e.second];
                y[e.second] += w * x[e.first];
            }
            deflate(y);
            double norm = normalize(y);
            st.spectral_iterations = it + 1;
            if (std::abs(norm - lambda) < 1e-12 && it > 10) {
                lambda = norm;
                break;
            }
            lambda = norm;
            x.swap(y);
        }
        st.spectral_available = true;
        st.spectral_gap = 1.0 - lambda;
    }
    return st;
}

} // namespace cspalloc
