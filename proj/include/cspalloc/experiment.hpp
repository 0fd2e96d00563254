#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "energy_io.hpp"
#include "gnt.hpp"
#include "io.hpp"
#include "oracle.hpp"
#include "solvers.hpp"

namespace cspalloc {

// Relative optimality gap |E_g - E_f| / |E_g|. Undefined at E_g = 0.
inline double rog(double e_ground, double e_found) {
    if (e_ground == 0.0)
        throw NumericError("relative optimality gap is undefined for zero ground energy");
    return std::abs(e_ground - e_found) / std::abs(e_ground);
}

struct RogRecord {
    double e_ground = 0.0;
    double e_found = 0.0;
    double rog = 0.0;
};

inline RogRecord make_rog(double e_ground, double e_found) {
    return {e_ground, e_found, rog(e_ground, e_found)};
}

struct GraphChoice {
    std::string kind = "gg3d"; // gg3d | margulis3d | cutoff | complete
    double r_cut = 4.0;        // cutoff graph only
    int max_neighbors = 16;    // cutoff graph only
};

inline CompGraph build_graph(const GraphChoice& choice, const PositionSet& positions,
                             const UnitCell& cell) {
    if (choice.kind == "gg3d") return gabber_galil_3d(positions.grid.g);
    if (choice.kind == "margulis3d") return margulis_3d(positions.grid.g);
    if (choice.kind == "cutoff")
        return radius_cutoff_graph(positions, cell, choice.r_cut, choice.max_neighbors);
    if (choice.kind == "complete") return complete_graph(positions.frac.size());
    throw ConfigError("unknown graph kind: " + choice.kind);
}

// One experiment: an instance, a solver with its budget, and a shot plan.
// Profiles fill in the published budgets; explicit config values override.
struct ExperimentSpec {
    CompositionConfig comp;
    std::optional<ForceField> forcefield; // Coulomb-only from charges when unset
    GraphChoice graph;
    std::string solver = "sa"; // greedy | sa | gnt | brute
    std::string profile = "test";
    std::size_t shots = 0;     // 0: profile default
    std::uint64_t seed = 1;    // base for derived seeds
    std::vector<std::uint64_t> seeds;
    GreedyConfig greedy;
    SAConfig sa;
    GntConfig gnt;
    OracleOptions oracle;
    std::optional<double> ground_energy;
    std::string out_dir; // empty: nothing written
    std::size_t threads = 0;

    void finalize() {
        require(solver == "greedy" || solver == "sa" || solver == "gnt" || solver == "brute",
                "unknown solver: " + solver);
        require(profile == "paper" || profile == "test", "unknown profile: " + profile);
        if (shots == 0) shots = solver == "gnt" ? 5 : (solver == "brute" ? 1 : 10);
        if (solver == "brute") shots = 1;
        if (seeds.empty()) {
            seeds.reserve(shots);
            for (std::size_t i = 0; i < shots; ++i) seeds.push_back(splitmix64(seed + i));
        }
        require(seeds.size() == shots, "seed list length " + std::to_string(seeds.size()) +
                                           " does not match shots " + std::to_string(shots));
    }
};

// Published experiment budgets; the test profile is the desk-scale variant.
inline void apply_profile(ExperimentSpec& spec, const std::string& profile) {
    spec.profile = profile;
    if (profile == "paper") {
        spec.greedy.max_iter = 200000;
        spec.sa.max_iter = 200000;
        spec.gnt.epochs = 100000;
    } else if (profile == "test") {
        spec.greedy.max_iter = 20000;
        spec.sa.max_iter = 20000;
        spec.gnt.epochs = 2000;
    } else {
        throw ConfigError("unknown profile: " + profile);
    }
}

// Config JSON: composition (path or inline object), optional forcefield
// path, graph {kind, r_cut, max_neighbors}, solver, profile, shots,
// seed/seeds, ground_energy, out, and per-solver setting objects. Paths
// resolve relative to the config file's directory.
inline ExperimentSpec experiment_from_json(const nlohmann::json& j,
                                           const std::string& config_dir = "") {
    ExperimentSpec spec;
    apply_profile(spec, j.value("profile", std::string("test")));

    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        if (fp.is_absolute() || config_dir.empty()) return p;
        return (std::filesystem::path(config_dir) / fp).string();
    };

    require(j.contains("composition"), "experiment config needs a composition");
    if (j["composition"].is_string())
        spec.comp = load_composition(resolve(j["composition"].get<std::string>()));
    else
        spec.comp = composition_from_json(j["composition"]);

    if (j.contains("forcefield"))
        spec.forcefield = load_forcefield(resolve(j["forcefield"].get<std::string>()));

    if (j.contains("graph")) {
        const auto& gj = j["graph"];
        spec.graph.kind = gj.value("kind", spec.graph.kind);
        spec.graph.r_cut = gj.value("r_cut", spec.graph.r_cut);
        spec.graph.max_neighbors = gj.value("max_neighbors", spec.graph.max_neighbors);
    }

    spec.solver = j.value("solver", spec.solver);
    spec.shots = j.value("shots", spec.shots);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("seeds")) spec.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("ground_energy")) spec.ground_energy = j["ground_energy"].get<double>();
    spec.out_dir = j.value("out", spec.out_dir);
    spec.threads = j.value("threads", spec.threads);

    if (j.contains("greedy")) {
        const auto& s = j["greedy"];
        spec.greedy.max_iter = s.value("max_iter", spec.greedy.max_iter);
        spec.greedy.trace_points = s.value("trace_points", spec.greedy.trace_points);
        spec.greedy.strategy.p_relocate = s.value("p_relocate", spec.greedy.strategy.p_relocate);
    }
    if (j.contains("sa")) {
        const auto& s = j["sa"];
        if (s.contains("t0")) spec.sa.t0 = s["t0"].get<double>();
        spec.sa.t_min_factor = s.value("t_min_factor", spec.sa.t_min_factor);
        spec.sa.cool_alpha = s.value("cool_alpha", spec.sa.cool_alpha);
        spec.sa.sweeps_per_cool = s.value("sweeps_per_cool", spec.sa.sweeps_per_cool);
        spec.sa.max_iter = s.value("max_iter", spec.sa.max_iter);
        spec.sa.trace_points = s.value("trace_points", spec.sa.trace_points);
        spec.sa.strategy.p_relocate = s.value("p_relocate", spec.sa.strategy.p_relocate);
    }
    if (j.contains("gnt")) {
        const auto& s = j["gnt"];
        spec.gnt.tau = s.value("tau", spec.gnt.tau);
        spec.gnt.epochs = s.value("epochs", spec.gnt.epochs);
        spec.gnt.sink_max_iter = s.value("sink_max_iter", spec.gnt.sink_max_iter);
        spec.gnt.sink_tol = s.value("sink_tol", spec.gnt.sink_tol);
        spec.gnt.d0 = s.value("d0", spec.gnt.d0);
        spec.gnt.dh = s.value("dh", spec.gnt.dh);
        spec.gnt.layers = s.value("layers", spec.gnt.layers);
        spec.gnt.lr = s.value("lr", spec.gnt.lr);
        spec.gnt.gumbel_on = s.value("gumbel_on", spec.gnt.gumbel_on);
        spec.gnt.trace_points = s.value("trace_points", spec.gnt.trace_points);
    }
    if (j.contains("oracle")) {
        const auto& s = j["oracle"];
        spec.oracle.budget = s.value("budget", spec.oracle.budget);
        if (s.contains("cache")) spec.oracle.cache_path = resolve(s["cache"].get<std::string>());
    }
    return spec;
}

inline ExperimentSpec load_experiment(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad experiment config " + path + ": " + e.what());
    }
    return experiment_from_json(j, std::filesystem::path(path).parent_path().string());
}

struct ShotOutcome {
    SolveResult res;
    std::string error; // empty on success
};

struct ExperimentBundle {
    ExperimentSpec spec; // finalized copy
    std::vector<ShotOutcome> shots;
    std::size_t best_index = 0;
    double best_energy = std::numeric_limits<double>::infinity();
    bool any_feasible = false;
    std::optional<RogRecord> gap;
    double space_log10 = 0.0;
    nlohmann::json summary; // deterministic: no timings inside
    nlohmann::json timing;
    std::vector<std::string> written;
};

namespace detail {

// Batched parallel shot execution; per-shot failures become recorded
// outcomes instead of aborting the bundle.
template <class Fn>
std::vector<ShotOutcome> run_shot_plan(Fn&& shot_fn, const std::vector<std::uint64_t>& seeds,
                                       std::size_t threads) {
    if (threads == 0) threads = worker_count();
    std::vector<ShotOutcome> out(seeds.size());
    auto guarded = [&](std::size_t i) {
        ShotOutcome o;
        try {
            o.res = shot_fn(seeds[i]);
        } catch (const std::exception& e) {
            o.res.feasible = false;
            o.res.seed = seeds[i];
            o.error = e.what();
        }
        return o;
    };
    std::size_t next = 0;
    while (next < seeds.size()) {
        const std::size_t batch = std::min(threads, seeds.size() - next);
        std::vector<std::future<ShotOutcome>> futs;
        futs.reserve(batch);
        for (std::size_t i = 0; i < batch; ++i)
            futs.push_back(std::async(std::launch::async, guarded, next + i));
        for (std::size_t i = 0; i < batch; ++i) out[next + i] = futs[i].get();
        next += batch;
    }
    return out;
}

template <class Q>
std::vector<ShotOutcome> dispatch_shots(const ExperimentSpec& spec, const Q& q,
                                        const CompGraph* graph) {
    const auto& counts = spec.comp.species.counts;
    if (spec.solver == "greedy")
        return run_shot_plan(
            [&](std::uint64_t s) { return greedy_solve(q, counts, spec.greedy, s); }, spec.seeds,
            spec.threads);
    if (spec.solver == "sa")
        return run_shot_plan([&](std::uint64_t s) { return sa_solve(q, counts, spec.sa, s); },
                             spec.seeds, spec.threads);
    if (spec.solver == "gnt") {
        require(graph != nullptr, "gnt needs a computation graph");
        return run_shot_plan(
            [&](std::uint64_t s) { return gnt_train(q, *graph, counts, spec.gnt, s).sol; },
            spec.seeds, spec.threads);
    }
    if (spec.solver == "brute") {
        OracleOptions opts = spec.oracle;
        if (opts.threads == 0) opts.threads = spec.threads;
        std::vector<ShotOutcome> out(1);
        try {
            OracleResult r = brute_force_min(q, counts, opts);
            out[0].res.solver = "brute";
            out[0].res.seed = spec.seeds[0];
            out[0].res.best_energy = r.min_energy;
            out[0].res.best_allocation = r.argmin;
            out[0].res.feasible = true;
            out[0].res.proposed = r.visited;
            out[0].res.wall_ms = r.wall_ms;
        } catch (const std::exception& e) {
            out[0].res.feasible = false;
            out[0].error = e.what();
        }
        return out;
    }
    throw ConfigError("unknown solver: " + spec.solver);
}

template <class Q>
void verify_emitted(const std::vector<ShotOutcome>& shots, const Q& q) {
    for (const auto& s : shots) {
        if (!s.res.feasible || !s.error.empty()) continue;
        double fresh = energy_hard(s.res.best_allocation, q);
        if (std::abs(fresh - s.res.best_energy) > 1e-6)
            throw NumericError("emitted energy failed re-verification: tracked " +
                               std::to_string(s.res.best_energy) + " vs fresh " +
                               std::to_string(fresh));
    }
}

inline void write_text(const std::string& path, const std::string& text,
                       std::vector<std::string>& written) {
    std::ofstream out(path);
    require(bool(out), "cannot write " + path);
    out << text;
    require(bool(out), "short write on " + path);
    written.push_back(path);
}

} // namespace detail

// Runs the shot plan, aggregates best-of-shots, verifies every emitted
// energy against a fresh evaluation, and (when out_dir is set) writes the
// bundle: summary.json (deterministic), timing.json (wall clock), per-shot
// trace CSVs, the best allocation in XYZ and JSON form, and plot-data CSVs.
inline ExperimentBundle run_experiment(const ExperimentSpec& spec_in) {
    ExperimentBundle b;
    b.spec = spec_in;
    b.spec.finalize();
    const ExperimentSpec& spec = b.spec;
    const auto& comp = spec.comp;
    auto t_start = std::chrono::steady_clock::now();

    PositionSet positions = build_grid(GridSpec{comp.g});
    UnitCell cell = comp.cell();
    ForceField ff = spec.forcefield
                        ? *spec.forcefield
                        : ForceField::coulomb_only(comp.species.labels, comp.species.charges);
    b.space_log10 = log10_count(count_feasible(comp.n(), comp.species.counts));

    CompGraph graph;
    const bool needs_graph = spec.solver == "gnt";

    const std::size_t dim = comp.n() * (comp.species.k() + 1);
    if (dim <= dense_q_limit) {
        QTable q = build_q(positions, cell, comp.species, ff);
        if (needs_graph) {
            graph = build_graph(spec.graph, positions, cell);
            attach_edge_features(graph, q);
        }
        b.shots = detail::dispatch_shots(spec, q, needs_graph ? &graph : nullptr);
        detail::verify_emitted(b.shots, q);
    } else {
        LazyQ q = build_q_lazy(positions, cell, comp.species, ff);
        if (needs_graph) {
            graph = build_graph(spec.graph, positions, cell);
            attach_edge_features(graph, q);
        }
        b.shots = detail::dispatch_shots(spec, q, needs_graph ? &graph : nullptr);
        detail::verify_emitted(b.shots, q);
    }

    for (std::size_t i = 0; i < b.shots.size(); ++i) {
        const auto& s = b.shots[i];
        if (!s.error.empty() || !s.res.feasible) continue;
        if (!b.any_feasible || s.res.best_energy < b.best_energy) {
            b.any_feasible = true;
            b.best_energy = s.res.best_energy;
            b.best_index = i;
        }
    }
    if (spec.ground_energy && b.any_feasible)
        b.gap = make_rog(*spec.ground_energy, b.best_energy);

    nlohmann::json sj;
    sj["instance"] = comp.name;
    sj["n"] = comp.n();
    sj["k"] = comp.species.k();
    sj["counts"] = comp.species.counts;
    sj["space_log10"] = b.space_log10;
    sj["solver"] = spec.solver;
    sj["profile"] = spec.profile;
    sj["graph"] = spec.solver == "gnt" ? spec.graph.kind : "";
    sj["shots"] = spec.shots;
    sj["seeds"] = spec.seeds;
    sj["feasible_shots"] = 0;
    sj["per_shot"] = nlohmann::json::array();
    std::size_t feasible_shots = 0;
    for (std::size_t i = 0; i < b.shots.size(); ++i) {
        const auto& s = b.shots[i];
        nlohmann::json row;
        row["index"] = i;
        row["seed"] = s.res.seed;
        row["feasible"] = s.res.feasible && s.error.empty();
        if (s.res.feasible && s.error.empty()) {
            row["best_energy"] = s.res.best_energy;
            row["step_of_best"] = s.res.step_of_best;
            ++feasible_shots;
        }
        if (!s.error.empty()) row["error"] = s.error;
        sj["per_shot"].push_back(row);
    }
    sj["feasible_shots"] = feasible_shots;
    if (b.any_feasible) {
        sj["best_energy"] = b.best_energy;
        sj["best_shot"] = b.best_index;
        sj["step_of_best"] = b.shots[b.best_index].res.step_of_best;
    }
    if (spec.ground_energy) sj["ground_energy"] = *spec.ground_energy;
    if (b.gap) sj["rog"] = b.gap->rog;
    b.summary = sj;

    nlohmann::json tj;
    tj["total_ms"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
            .count();
    tj["per_shot_ms"] = nlohmann::json::array();
    for (const auto& s : b.shots) tj["per_shot_ms"].push_back(s.res.wall_ms);
    b.timing = tj;

    if (!spec.out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(spec.out_dir);
        auto at = [&](const std::string& name) { return (fs::path(spec.out_dir) / name).string(); };
        detail::write_text(at("summary.json"), b.summary.dump(2) + "\n", b.written);
        detail::write_text(at("timing.json"), b.timing.dump(2) + "\n", b.written);
        for (std::size_t i = 0; i < b.shots.size(); ++i) {
            const auto& s = b.shots[i];
            if (s.res.trace.empty()) continue;
            std::string p = at("trace_shot_" + std::to_string(i) + ".csv");
            write_trace_csv(p, s.res.trace_columns, s.res.trace);
            b.written.push_back(p);
        }
        if (b.any_feasible) {
            const Allocation& best = b.shots[b.best_index].res.best_allocation;
            std::string xyz = at("best.xyz");
            write_allocation_xyz(xyz, best, positions, cell, comp.species.labels);
            b.written.push_back(xyz);
            std::string aj = at("best.json");
            write_allocation_json(aj, best, comp.species, comp.g, comp.a, b.best_energy);
            b.written.push_back(aj);
        }
        if (b.gap)
            detail::write_text(at("plot_rog.csv"),
                               "space_log10,rog\n" + detail::fmt_g(b.space_log10) + "," +
                                   detail::fmt_g(b.gap->rog) + "\n",
                               b.written);
        if (b.any_feasible)
            detail::write_text(at("plot_steps.csv"),
                               "space_log10,steps_to_best\n" + detail::fmt_g(b.space_log10) + "," +
                                   detail::fmt_g(double(b.shots[b.best_index].res.step_of_best)) +
                                   "\n",
                               b.written);
    }
    return b;
}

// Structural diagnostics for a built graph, with optional per-node
// neighbor dumps for spot inspection.
inline nlohmann::json graph_report(const CompGraph& g,
                                   const std::vector<std::size_t>& sample_nodes = {}) {
    GraphStats st = graph_stats(g);
    nlohmann::json j = graph_metadata(g);
    j["degree"] = {{"min", st.deg_min}, {"max", st.deg_max}, {"mean", st.deg_mean}};
    j["components"] = st.components;
    j["diameter_estimate"] = st.diameter_estimate;
    j["spectral"] = {{"available", st.spectral_available},
                     {"gap", st.spectral_gap},
                     {"iterations", st.spectral_iterations}};
    if (!sample_nodes.empty()) {
        nlohmann::json nb = nlohmann::json::object();
        for (std::size_t v : sample_nodes) {
            require(v < g.n_nodes, "sample node out of range");
            nb[std::to_string(v)] = g.neighbors(v);
        }
        j["neighbors"] = nb;
    }
    return j;
}

} // namespace cspalloc
