#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "common.hpp"
#include "core.hpp"
#include "energy.hpp"
#include "graphs.hpp"
#include "rng.hpp"
#include "solvers.hpp"

namespace cspalloc {

// Exact GeLU: 0.5 x (1 + erf(x / sqrt(2))), derivative Phi(x) + x phi(x).
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

// Directed expansion of an undirected feature-carrying graph. The stored
// feature block of edge (u, v) with u < v is Q[(u,t1),(v,t2)] in row-major
// order; the reverse direction reads the transposed block, which is valid
// because the interaction table is symmetric.
struct DirectedEdges {
    std::size_t n_nodes = 0;
    std::size_t kk = 0; // species count including void
    std::vector<std::uint32_t> src, dst;
    std::vector<std::uint32_t> undirected; // index into graph->edge_feat
    std::vector<std::uint8_t> transposed;
    std::vector<std::uint32_t> in_offsets; // CSR over destination nodes
    std::vector<std::uint32_t> in_edges;
    const CompGraph* graph = nullptr;

    std::size_t count() const { return src.size(); }

    double feat(std::size_t e, std::size_t t1, std::size_t t2) const {
        const auto& f = graph->edge_feat[undirected[e]];
        return transposed[e] ? f[t2 * kk + t1] : f[t1 * kk + t2];
    }
};

inline DirectedEdges make_directed(const CompGraph& g) {
    require(g.feat_species >= 1, "graph has no edge features attached");
    DirectedEdges d;
    d.n_nodes = g.n_nodes;
    d.kk = g.feat_species;
    d.graph = &g;
    d.src.reserve(2 * g.edges.size());
    d.dst.reserve(2 * g.edges.size());
    d.undirected.reserve(2 * g.edges.size());
    d.transposed.reserve(2 * g.edges.size());
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        auto [u, v] = g.edges[i];
        d.src.push_back(u);
        d.dst.push_back(v);
        d.undirected.push_back(static_cast<std::uint32_t>(i));
        d.transposed.push_back(0);
        d.src.push_back(v);
        d.dst.push_back(u);
        d.undirected.push_back(static_cast<std::uint32_t>(i));
        d.transposed.push_back(1);
    }
    d.in_offsets.assign(d.n_nodes + 1, 0);
    for (std::uint32_t v : d.dst) ++d.in_offsets[v + 1];
    for (std::size_t i = 1; i <= d.n_nodes; ++i) d.in_offsets[i] += d.in_offsets[i - 1];
    d.in_edges.resize(d.count());
    std::vector<std::uint32_t> cursor(d.in_offsets.begin(), d.in_offsets.end() - 1);
    for (std::size_t e = 0; e < d.count(); ++e) d.in_edges[cursor[d.dst[e]]++] = e;
    return d;
}

struct GntConfig {
    double tau = 0.3;
    std::uint64_t epochs = 2000;
    std::size_t sink_max_iter = 200;
    double sink_tol = 1e-3; // convergence precision on both marginals
    std::size_t d0 = 64;
    std::size_t dh = 64;
    std::size_t layers = 3;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    bool gumbel_on = true;
    std::size_t trace_points = 1000;

    void validate() const {
        require(tau > 0.0, "tau must be > 0");
        require(sink_tol > 0.0, "sinkhorn tolerance must be > 0");
        require(epochs >= 1, "at least one epoch");
        require(d0 >= 1 && dh >= 1 && layers >= 1, "model sizes must be >= 1");
        require(lr > 0.0 && beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                "bad optimizer settings");
    }
};

// Flat parameter store: node embedding table, one shared edge projection,
// and per layer a learnable scalar plus a two-layer MLP. Hidden layers
// emit d0-wide embeddings; the last layer emits k+1 scores per node.
struct GntModel {
    std::size_t n = 0, k = 0, d0 = 0, dh = 0, layers = 0;
    std::vector<double> params, grads;
    std::size_t off_embed = 0, off_we = 0, off_be = 0;

    struct LayerOffsets {
        std::size_t alpha = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0;
        std::size_t din = 0, dout = 0;
    };
    std::vector<LayerOffsets> lay;

    std::size_t kk() const { return k + 1; }
    std::size_t feat_len() const { return kk() * kk(); }
    void zero_grad() { std::fill(grads.begin(), grads.end(), 0.0); }

    static GntModel layout(std::size_t n, std::size_t k, const GntConfig& cfg) {
        GntModel m;
        m.n = n;
        m.k = k;
        m.d0 = cfg.d0;
        m.dh = cfg.dh;
        m.layers = cfg.layers;
        std::size_t at = 0;
        m.off_embed = at;
        at += n * m.d0;
        m.off_we = at;
        at += m.d0 * m.feat_len();
        m.off_be = at;
        at += m.d0;
        for (std::size_t l = 0; l < m.layers; ++l) {
            LayerOffsets lo;
            lo.din = m.d0;
            lo.dout = (l + 1 == m.layers) ? m.kk() : m.d0;
            lo.alpha = at;
            at += 1;
            lo.w1 = at;
            at += m.dh * lo.din;
            lo.b1 = at;
            at += m.dh;
            lo.w2 = at;
            at += lo.dout * m.dh;
            lo.b2 = at;
            at += lo.dout;
            m.lay.push_back(lo);
        }
        m.params.assign(at, 0.0);
        m.grads.assign(at, 0.0);
        return m;
    }

    // Embeddings uniform in [-1, 1], affine weights uniform with the
    // fan-balanced bound sqrt(6 / (fan_in + fan_out)), biases and the
    // layer scalars zero. Fill order is fixed, so a seed pins the model.
    static GntModel init(std::size_t n, std::size_t k, const GntConfig& cfg, Rng& rng) {
        GntModel m = layout(n, k, cfg);
        for (std::size_t i = 0; i < n * m.d0; ++i)
            m.params[m.off_embed + i] = rng.uniform(-1.0, 1.0);
        auto fill_affine = [&](std::size_t off, std::size_t out, std::size_t in) {
            double s = std::sqrt(6.0 / double(in + out));
            for (std::size_t i = 0; i < out * in; ++i) m.params[off + i] = rng.uniform(-s, s);
        };
        fill_affine(m.off_we, m.d0, m.feat_len());
        for (const auto& lo : m.lay) {
            fill_affine(lo.w1, m.dh, lo.din);
            fill_affine(lo.w2, lo.dout, m.dh);
        }
        return m;
    }
};

// Saved intermediates of one forward pass, enough to replay it backwards.
struct GineTape {
    Mat edge_e; // directed-edge embeddings after the shared projection
    struct LayerTape {
        Mat h_in; // n x din
        Mat s;    // per directed edge: h_in[src] + edge_e, before GeLU
        Mat z;    // aggregated input to the MLP
        Mat u1;   // first affine output
        Mat a1;   // GeLU(u1)
        Mat u2;   // second affine output
    };
    std::vector<LayerTape> layers;
};

// Message passing: h_v <- GeLU(MLP((1 + alpha) h_v + sum_j GeLU(h_j + e_jv)))
// per layer, with the edge embeddings projected once and shared.
inline Mat gine_forward(const DirectedEdges& de, const GntModel& m, GineTape& tape) {
    const std::size_t n = de.n_nodes, d0 = m.d0, dh = m.dh, F = m.feat_len();
    require(n == m.n, "graph node count does not match the embedding table");
    require(de.kk == m.kk(), "edge feature block does not match species count");

    tape.edge_e = Mat(de.count(), d0);
    const double* we = m.params.data() + m.off_we;
    const double* be = m.params.data() + m.off_be;
    for (std::size_t e = 0; e < de.count(); ++e)
        for (std::size_t o = 0; o < d0; ++o) {
            double acc = be[o];
            for (std::size_t f = 0; f < F; ++f)
                acc += we[o * F + f] * de.feat(e, f / de.kk, f % de.kk);
            tape.edge_e(e, o) = acc;
        }

    Mat h(n, d0);
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t i = 0; i < d0; ++i) h(v, i) = m.params[m.off_embed + v * d0 + i];

    tape.layers.clear();
    tape.layers.resize(m.layers);
    for (std::size_t l = 0; l < m.layers; ++l) {
        const auto& lo = m.lay[l];
        auto& T = tape.layers[l];
        T.h_in = h;
        const double alpha = m.params[lo.alpha];
        const double* w1 = m.params.data() + lo.w1;
        const double* b1 = m.params.data() + lo.b1;
        const double* w2 = m.params.data() + lo.w2;
        const double* b2 = m.params.data() + lo.b2;

        T.s = Mat(de.count(), d0);
        for (std::size_t e = 0; e < de.count(); ++e) {
            const std::size_t j = de.src[e];
            for (std::size_t i = 0; i < d0; ++i) T.s(e, i) = T.h_in(j, i) + tape.edge_e(e, i);
        }

        T.z = Mat(n, d0);
        for (std::size_t v = 0; v < n; ++v) {
            for (std::size_t i = 0; i < d0; ++i) T.z(v, i) = (1.0 + alpha) * T.h_in(v, i);
            for (std::uint32_t ei = de.in_offsets[v]; ei < de.in_offsets[v + 1]; ++ei) {
                const std::size_t e = de.in_edges[ei];
                for (std::size_t i = 0; i < d0; ++i) T.z(v, i) += gelu(T.s(e, i));
            }
        }

        T.u1 = Mat(n, dh);
        T.a1 = Mat(n, dh);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t hh = 0; hh < dh; ++hh) {
                double acc = b1[hh];
                for (std::size_t i = 0; i < d0; ++i) acc += w1[hh * d0 + i] * T.z(v, i);
                T.u1(v, hh) = acc;
                T.a1(v, hh) = gelu(acc);
            }

        T.u2 = Mat(n, lo.dout);
        Mat h_out(n, lo.dout);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t o = 0; o < lo.dout; ++o) {
                double acc = b2[o];
                for (std::size_t hh = 0; hh < dh; ++hh) acc += w2[o * dh + hh] * T.a1(v, hh);
                T.u2(v, o) = acc;
                h_out(v, o) = gelu(acc);
            }
        h = std::move(h_out);
    }
    for (double v : h.a)
        if (!std::isfinite(v)) throw NumericError("non-finite activation in message passing");
    return h;
}

// Reverse pass matching gine_forward; accumulates into model.grads.
inline void gine_backward(const DirectedEdges& de, GntModel& m, const GineTape& tape,
                          const Mat& d_h_final) {
    const std::size_t n = de.n_nodes, d0 = m.d0, dh = m.dh, F = m.feat_len();
    Mat d_edge(de.count(), d0, 0.0); // shared across layers
    Mat g_out = d_h_final;

    for (std::size_t l = m.layers; l-- > 0;) {
        const auto& lo = m.lay[l];
        const auto& T = tape.layers[l];
        const double alpha = m.params[lo.alpha];
        const double* w1 = m.params.data() + lo.w1;
        const double* w2 = m.params.data() + lo.w2;

        Mat g_u2(n, lo.dout);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t o = 0; o < lo.dout; ++o)
                g_u2(v, o) = g_out(v, o) * gelu_grad(T.u2(v, o));

        Mat g_a1(n, dh, 0.0);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t o = 0; o < lo.dout; ++o) {
                const double gv = g_u2(v, o);
                if (gv == 0.0) continue;
                m.grads[lo.b2 + o] += gv;
                for (std::size_t hh = 0; hh < dh; ++hh) {
                    m.grads[lo.w2 + o * dh + hh] += gv * T.a1(v, hh);
                    g_a1(v, hh) += w2[o * dh + hh] * gv;
                }
            }

        Mat g_u1(n, dh);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t hh = 0; hh < dh; ++hh)
                g_u1(v, hh) = g_a1(v, hh) * gelu_grad(T.u1(v, hh));

        Mat g_z(n, d0, 0.0);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t hh = 0; hh < dh; ++hh) {
                const double gv = g_u1(v, hh);
                if (gv == 0.0) continue;
                m.grads[lo.b1 + hh] += gv;
                for (std::size_t i = 0; i < d0; ++i) {
                    m.grads[lo.w1 + hh * d0 + i] += gv * T.z(v, i);
                    g_z(v, i) += w1[hh * d0 + i] * gv;
                }
            }

        double d_alpha = 0.0;
        Mat g_hin(n, d0, 0.0);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t i = 0; i < d0; ++i) {
                d_alpha += g_z(v, i) * T.h_in(v, i);
                g_hin(v, i) = (1.0 + alpha) * g_z(v, i);
            }
        m.grads[lo.alpha] += d_alpha;

        for (std::size_t e = 0; e < de.count(); ++e) {
            const std::size_t j = de.src[e], v = de.dst[e];
            for (std::size_t i = 0; i < d0; ++i) {
                const double gs = g_z(v, i) * gelu_grad(T.s(e, i));
                g_hin(j, i) += gs;
                d_edge(e, i) += gs;
            }
        }
        g_out = std::move(g_hin);
    }

    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t i = 0; i < d0; ++i) m.grads[m.off_embed + v * d0 + i] += g_out(v, i);

    for (std::size_t e = 0; e < de.count(); ++e)
        for (std::size_t o = 0; o < d0; ++o) {
            const double ge = d_edge(e, o);
            if (ge == 0.0) continue;
            m.grads[m.off_be + o] += ge;
            for (std::size_t f = 0; f < F; ++f)
                m.grads[m.off_we + o * F + f] += ge * de.feat(e, f / de.kk, f % de.kk);
        }
}

// i.i.d. standard Gumbel noise matrix.
inline Mat gumbel_sample(std::size_t rows, std::size_t cols, Rng& rng) {
    Mat m(rows, cols);
    for (double& v : m.a) v = rng.gumbel();
    return m;
}

// Column marginals including the implied void count.
inline std::vector<double> full_marginals(std::size_t n, const std::vector<long>& counts) {
    long total = 0;
    for (long c : counts) {
        require(c >= 0, "species count must be >= 0");
        total += c;
    }
    require(static_cast<std::size_t>(total) <= n, "more atoms than positions");
    std::vector<double> c_full(counts.begin(), counts.end());
    c_full.push_back(double(static_cast<long>(n) - total));
    return c_full;
}

struct SinkhornResult {
    Mat s;                      // exp(H) after the final executed half step
    std::size_t iterations = 0; // completed row+column rounds
    bool converged = false;
    std::vector<Mat> tape; // H after each half step, in execution order
};

namespace detail {

inline double lse(const double* v, std::size_t len, std::size_t stride) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, v[i * stride]);
    if (!std::isfinite(mx)) return mx; // all -inf stays -inf
    double acc = 0.0;
    for (std::size_t i = 0; i < len; ++i) acc += std::exp(v[i * stride] - mx);
    return mx + std::log(acc);
}

} // namespace detail

// Log-space scaling onto the transportation polytope with row sums 1 and
// column sums c (void included). The input is divided by tau here; callers
// pass raw scores plus any noise. Stops once both marginals of exp(H) are
// within d, or after max_iter rounds (recorded, not fatal). d = 0 forces
// exactly max_iter rounds, which grad checks rely on for a fixed-length
// unroll.
inline SinkhornResult sinkhorn_log(const Mat& h_in, const std::vector<double>& c_full, double tau,
                                   std::size_t max_iter, double d) {
    require(tau > 0.0, "tau must be > 0");
    require(d >= 0.0, "tolerance must be >= 0");
    require(h_in.cols == c_full.size(), "marginal vector does not match column count");
    const std::size_t n = h_in.rows, kk = h_in.cols;
    double csum = 0.0;
    for (double c : c_full) {
        require(c >= 0.0, "marginals must be >= 0");
        csum += c;
    }
    require(std::abs(csum - double(n)) < 1e-9, "marginals must sum to the row count");

    std::vector<double> log_c(kk);
    for (std::size_t j = 0; j < kk; ++j) log_c[j] = std::log(std::max(c_full[j], 1e-30));

    SinkhornResult out;
    Mat h = h_in;
    for (double& v : h.a) v /= tau;

    for (std::size_t it = 1; it <= max_iter; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double l = detail::lse(&h.a[i * kk], kk, 1);
            for (std::size_t j = 0; j < kk; ++j) h(i, j) -= l;
        }
        out.tape.push_back(h);
        for (std::size_t j = 0; j < kk; ++j) {
            double mcol = detail::lse(&h.a[j], n, kk);
            double shift = log_c[j] - mcol;
            for (std::size_t i = 0; i < n; ++i) h(i, j) += shift;
        }
        out.tape.push_back(h);
        out.iterations = it;

        double row_dev = 0.0, col_dev = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double rs = 0.0;
            for (std::size_t j = 0; j < kk; ++j) rs += std::exp(h(i, j));
            row_dev = std::max(row_dev, std::abs(rs - 1.0));
        }
        for (std::size_t j = 0; j < kk; ++j) {
            double cs = 0.0;
            for (std::size_t i = 0; i < n; ++i) cs += std::exp(h(i, j));
            col_dev = std::max(col_dev, std::abs(cs - c_full[j]));
        }
        if (row_dev < d && col_dev < d) {
            out.converged = true;
            break;
        }
    }

    out.s = Mat(n, kk);
    for (std::size_t i = 0; i < h.a.size(); ++i) {
        out.s.a[i] = std::exp(h.a[i]);
        if (!std::isfinite(out.s.a[i])) throw NumericError("non-finite Sinkhorn output");
    }
    return out;
}

// Gradient of a loss with respect to sinkhorn_log's input, by unrolling the
// executed half steps in reverse. Row step H' = H - LSE_row(H) pulls back as
// G <- G - softmax_row(H) * rowsum(G) with softmax_row(H) = exp(H'); the
// column step is the analogue with exp(H' - log c). The division by tau at
// the front scales the result.
inline Mat sinkhorn_backward(const SinkhornResult& sr, const std::vector<double>& c_full,
                             double tau, const Mat& d_s) {
    const std::size_t n = d_s.rows, kk = d_s.cols;
    std::vector<double> log_c(kk);
    for (std::size_t j = 0; j < kk; ++j) log_c[j] = std::log(std::max(c_full[j], 1e-30));

    Mat g(n, kk);
    for (std::size_t i = 0; i < g.a.size(); ++i) g.a[i] = d_s.a[i] * sr.s.a[i]; // through exp

    for (std::size_t idx = sr.tape.size(); idx-- > 0;) {
        const Mat& h_after = sr.tape[idx];
        if (idx % 2 == 1) { // column half step
            for (std::size_t j = 0; j < kk; ++j) {
                double colsum = 0.0;
                for (std::size_t i = 0; i < n; ++i) colsum += g(i, j);
                if (colsum == 0.0) continue;
                for (std::size_t i = 0; i < n; ++i)
                    g(i, j) -= std::exp(h_after(i, j) - log_c[j]) * colsum;
            }
        } else { // row half step
            for (std::size_t i = 0; i < n; ++i) {
                double rowsum = 0.0;
                for (std::size_t j = 0; j < kk; ++j) rowsum += g(i, j);
                if (rowsum == 0.0) continue;
                for (std::size_t j = 0; j < kk; ++j) g(i, j) -= std::exp(h_after(i, j)) * rowsum;
            }
        }
    }
    for (double& v : g.a) v /= tau;
    return g;
}

// Hard rounding of a soft allocation: entry >= 0.5 becomes one. Feasible
// only if every row has exactly one selected column and the species
// columns hit their counts.
struct ThresholdResult {
    bool feasible = false;
    Allocation alloc;
    std::string detail;
};

inline ThresholdResult threshold_allocation(const Mat& s, const std::vector<long>& counts) {
    const std::size_t n = s.rows, kk = counts.size() + 1;
    require(s.cols == kk, "soft allocation column count does not match species");
    ThresholdResult out;
    out.alloc.assign.assign(n, -1);
    for (std::size_t p = 0; p < n; ++p) {
        int hits = 0;
        for (std::size_t t = 0; t < kk; ++t)
            if (s(p, t) >= 0.5) {
                ++hits;
                out.alloc.assign[p] = static_cast<int>(t);
            }
        if (hits != 1) {
            out.detail = "row " + std::to_string(p) + " selects " + std::to_string(hits) +
                         " columns at threshold 0.5";
            return out;
        }
    }
    AllocationVerdict v = validate_allocation(out.alloc, n, counts);
    if (!v.ok) {
        out.detail = v.detail;
        return out;
    }
    out.feasible = true;
    return out;
}

struct GntResult {
    SolveResult sol;
    double final_soft_loss = 0.0;
    Mat final_s;
    std::uint64_t feasible_epochs = 0;
    std::uint64_t converged_epochs = 0;
};

namespace detail {

struct Adam {
    std::vector<double> m1, m2;
    std::uint64_t t = 0;

    explicit Adam(std::size_t size) : m1(size, 0.0), m2(size, 0.0) {}

    void step(std::vector<double>& p, const std::vector<double>& g, const GntConfig& cfg) {
        ++t;
        const double c1 = 1.0 - std::pow(cfg.beta1, double(t));
        const double c2 = 1.0 - std::pow(cfg.beta2, double(t));
        for (std::size_t i = 0; i < p.size(); ++i) {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g[i];
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            p[i] -= cfg.lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.adam_eps);
        }
    }
};

} // namespace detail

// One training run: per epoch a forward pass, Gumbel noise, Sinkhorn
// projection, soft-energy loss, full reverse-mode gradient, optimizer
// step, then thresholding and best-feasible tracking. Deterministic per
// seed. Finding no feasible epoch is reported, not thrown.
template <class Q>
GntResult gnt_train(const Q& q, const CompGraph& g, const std::vector<long>& counts,
                    const GntConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    require(g.n_nodes == q.n, "graph node count does not match the energy source");
    require(g.feat_species >= 1, "graph has no edge features attached");
    require(g.feat_species == q.k + 1, "graph features were built for a different species count");
    require(counts.size() == q.k, "species count mismatch");
    auto t_start = std::chrono::steady_clock::now();

    const std::vector<double> c_full = full_marginals(q.n, counts);
    DirectedEdges de = make_directed(g);
    Rng rng(seed);
    GntModel model = GntModel::init(q.n, q.k, cfg, rng);
    detail::Adam opt(model.params.size());

    GntResult res;
    res.sol.solver = "gnt";
    res.sol.seed = seed;
    res.sol.feasible = false;
    res.sol.best_energy = std::numeric_limits<double>::infinity();
    res.sol.trace_columns = {"epoch", "soft_loss", "best_hard_e", "feasible", "sinkhorn_iters"};

    const std::uint64_t stride =
        std::max<std::uint64_t>(1, cfg.epochs / std::max<std::size_t>(1, cfg.trace_points));

    for (std::uint64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        GineTape tape;
        Mat h = gine_forward(de, model, tape);
        if (cfg.gumbel_on) {
            Mat noise = gumbel_sample(q.n, q.k + 1, rng);
            for (std::size_t i = 0; i < h.a.size(); ++i) h.a[i] += noise.a[i];
        }
        SinkhornResult sr = sinkhorn_log(h, c_full, cfg.tau, cfg.sink_max_iter, cfg.sink_tol);
        double soft = energy_soft(sr.s, q);

        Mat d_s = energy_soft_grad(sr.s, q);
        Mat d_h = sinkhorn_backward(sr, c_full, cfg.tau, d_s);
        model.zero_grad();
        gine_backward(de, model, tape, d_h);
        opt.step(model.params, model.grads, cfg);

        ThresholdResult thr = threshold_allocation(sr.s, counts);
        if (thr.feasible) {
            ++res.feasible_epochs;
            double hard = energy_hard(thr.alloc, q);
            if (!res.sol.feasible || hard < res.sol.best_energy) {
                res.sol.feasible = true;
                res.sol.best_energy = hard;
                res.sol.best_allocation = thr.alloc;
                res.sol.step_of_best = epoch;
            }
        }
        if (sr.converged) ++res.converged_epochs;

        if (epoch % stride == 0 || epoch == cfg.epochs) {
            res.sol.trace.push_back({{double(epoch), soft, res.sol.best_energy,
                                      thr.feasible ? 1.0 : 0.0, double(sr.iterations)}});
        }
        if (epoch == cfg.epochs) {
            res.final_soft_loss = soft;
            res.final_s = sr.s;
        }
    }

    if (res.sol.feasible) {
        double fresh = energy_hard(res.sol.best_allocation, q);
        if (std::abs(fresh - res.sol.best_energy) > 1e-9)
            throw NumericError("best energy bookkeeping drifted");
        res.sol.best_energy = fresh;
    }
    res.sol.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
            .count();
    return res;
}

// Maximum relative disagreement between the analytic gradient and central
// finite differences of the full loss, over every parameter. Noise is
// sampled once and held fixed; the Sinkhorn tolerance is forced to zero so
// every evaluation unrolls exactly max_iter rounds.
template <class Q>
double grad_check(const Q& q, const CompGraph& g, const std::vector<long>& counts,
                  const GntConfig& cfg, std::uint64_t seed, double eps_fd = 1e-5) {
    cfg.validate();
    const std::vector<double> c_full = full_marginals(q.n, counts);
    DirectedEdges de = make_directed(g);
    Rng rng(seed);
    GntModel model = GntModel::init(q.n, q.k, cfg, rng);
    Mat noise(q.n, q.k + 1, 0.0);
    if (cfg.gumbel_on) noise = gumbel_sample(q.n, q.k + 1, rng);

    auto loss = [&](const GntModel& mm) {
        GineTape tape;
        Mat h = gine_forward(de, mm, tape);
        for (std::size_t i = 0; i < h.a.size(); ++i) h.a[i] += noise.a[i];
        SinkhornResult sr = sinkhorn_log(h, c_full, cfg.tau, cfg.sink_max_iter, 0.0);
        return energy_soft(sr.s, q);
    };

    GineTape tape;
    Mat h = gine_forward(de, model, tape);
    for (std::size_t i = 0; i < h.a.size(); ++i) h.a[i] += noise.a[i];
    SinkhornResult sr = sinkhorn_log(h, c_full, cfg.tau, cfg.sink_max_iter, 0.0);
    Mat d_s = energy_soft_grad(sr.s, q);
    Mat d_h = sinkhorn_backward(sr, c_full, cfg.tau, d_s);
    model.zero_grad();
    gine_backward(de, model, tape, d_h);

    double worst = 0.0;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const double saved = model.params[i];
        model.params[i] = saved + eps_fd;
        const double up = loss(model);
        model.params[i] = saved - eps_fd;
        const double down = loss(model);
        model.params[i] = saved;
        const double fd = (up - down) / (2.0 * eps_fd);
        const double an = model.grads[i];
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4});
        worst = std::max(worst, rel);
    }
    return worst;
}

// Versioned binary checkpoint: fixed header then the raw parameter blob.
inline void save_checkpoint(const std::string& path, const GntModel& m) {
    std::ofstream out(path, std::ios::binary);
    require(bool(out), "cannot write checkpoint: " + path);
    const char magic[8] = {'G', 'N', 'T', 'C', 'K', 'P', 'T', '\0'};
    out.write(magic, 8);
    std::uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    std::uint64_t dims[5] = {m.n, m.k, m.d0, m.dh, m.layers};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    std::uint64_t count = m.params.size();
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(m.params.data()),
              static_cast<std::streamsize>(count * sizeof(double)));
    require(bool(out), "short write on checkpoint: " + path);
}

inline GntModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), "cannot read checkpoint: " + path);
    char magic[8] = {};
    in.read(magic, 8);
    require(std::memcmp(magic, "GNTCKPT\0", 8) == 0, "not a checkpoint file: " + path);
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    require(version == 1, "unsupported checkpoint version");
    std::uint64_t dims[5] = {};
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    GntConfig cfg;
    cfg.d0 = dims[2];
    cfg.dh = dims[3];
    cfg.layers = dims[4];
    GntModel m = GntModel::layout(dims[0], dims[1], cfg);
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    require(count == m.params.size(), "checkpoint parameter count mismatch");
    in.read(reinterpret_cast<char*>(m.params.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    require(bool(in), "short read on checkpoint: " + path);
    return m;
}

} // namespace cspalloc
