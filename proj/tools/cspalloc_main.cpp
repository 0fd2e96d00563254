// Command-line surface for the atom-allocation toolkit: build interaction
// tables, construct graphs, run solvers with multi-shot budgets, query the
// exhaustive oracle, and compute optimality gaps. One JSON config file
// drives an experiment; flags override individual fields.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include <cspalloc/experiment.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    cspalloc::require(f.good(), "cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw cspalloc::ConfigError("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

// A config is either a bare composition file or an experiment file that
// references one; both are accepted wherever an instance is needed.
cspalloc::ExperimentSpec spec_from_config(const std::string& path) {
    json j = load_json_file(path);
    std::string dir = fs::path(path).parent_path().string();
    if (j.contains("composition")) return cspalloc::experiment_from_json(j, dir);
    json wrapped;
    wrapped["composition"] = j;
    return cspalloc::experiment_from_json(wrapped, dir);
}

struct SolveFlags {
    std::string config;
    std::string solver;
    std::string graph_kind;
    std::string out;
    std::string profile;
    std::size_t shots = 0;
    std::vector<std::uint64_t> seeds;
    bool quiet = false;
};

// Flag overrides are injected into the parsed JSON so the config parser
// stays the single source of precedence rules.
cspalloc::ExperimentSpec build_spec(const SolveFlags& f) {
    json j = load_json_file(f.config);
    std::string dir = fs::path(f.config).parent_path().string();
    if (!j.contains("composition")) {
        json wrapped;
        wrapped["composition"] = j;
        j = wrapped;
    }
    if (!f.profile.empty()) j["profile"] = f.profile;
    if (!f.solver.empty()) j["solver"] = f.solver;
    if (!f.graph_kind.empty()) j["graph"]["kind"] = f.graph_kind;
    if (f.shots > 0) j["shots"] = f.shots;
    if (f.seeds.size() == 1) {
        j["seed"] = f.seeds[0];
        j.erase("seeds");
    } else if (f.seeds.size() > 1) {
        j["seeds"] = f.seeds;
    }
    if (!f.out.empty()) j["out"] = f.out;
    return cspalloc::experiment_from_json(j, dir);
}

void emit(const json& j, bool quiet) {
    if (!quiet) std::cout << j.dump(2) << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"discrete atom-allocation structure prediction toolkit"};
    app.require_subcommand(1);

    // build-q
    std::string bq_config, bq_ff, bq_out, bq_csv;
    auto* bq = app.add_subcommand("build-q", "build the pairwise interaction table");
    bq->add_option("--config", bq_config, "composition or experiment config JSON")->required();
    bq->add_option("--forcefield", bq_ff, "force-field JSON (default: Coulomb-only)");
    bq->add_option("--out", bq_out, "output binary table path")->required();
    bq->add_option("--csv", bq_csv, "also write a CSV rendering here");

    // graph
    std::string g_kind = "gg3d", g_config, g_out;
    int g_g = 0, g_nn = 16;
    double g_a = 0.0, g_rcut = 4.0;
    auto* gr = app.add_subcommand("graph", "construct a computation graph and export it");
    gr->add_option("--graph", g_kind, "gg3d | margulis3d | cutoff | complete");
    gr->add_option("--g", g_g, "grid subdivisions per axis");
    gr->add_option("--a", g_a, "cell parameter (cutoff graphs)");
    gr->add_option("--config", g_config, "composition config supplying g and a");
    gr->add_option("--r-cut", g_rcut, "cutoff radius in Angstrom");
    gr->add_option("--max-neighbors", g_nn, "nearest-neighbor cap for cutoff graphs");
    gr->add_option("--out", g_out, "output directory")->required();

    // solve
    SolveFlags sf;
    auto* sv = app.add_subcommand("solve", "run a solver with a multi-shot budget");
    sv->add_option("--config", sf.config, "experiment config JSON")->required();
    sv->add_option("--solver", sf.solver, "greedy | sa | gnt | brute");
    sv->add_option("--graph", sf.graph_kind, "gg3d | margulis3d | cutoff | complete");
    sv->add_option("--shots", sf.shots, "number of independent shots");
    sv->add_option("--seed", sf.seeds,
                   "one value: base seed; several values: explicit per-shot seeds");
    sv->add_option("--out", sf.out, "output directory for the result bundle");
    sv->add_option("--profile", sf.profile, "paper | test budget profile");
    sv->add_flag("--quiet", sf.quiet, "suppress the summary on stdout");

    // oracle
    std::string or_config, or_out, or_cache;
    std::uint64_t or_budget = 0;
    auto* orc = app.add_subcommand("oracle", "exhaustive minimum over all feasible allocations");
    orc->add_option("--config", or_config, "composition or experiment config JSON")->required();
    orc->add_option("--out", or_out, "output directory");
    orc->add_option("--budget", or_budget, "refuse state spaces larger than this");
    orc->add_option("--cache", or_cache, "JSON sidecar cache path");

    // rog
    double rg_ground = 0.0, rg_found = 0.0;
    auto* rg = app.add_subcommand("rog", "relative optimality gap |Eg-Ef|/|Eg|");
    rg->add_option("--ground", rg_ground, "ground-truth energy")->required();
    rg->add_option("--found", rg_found, "found energy")->required();

    // report
    std::string rp_kind = "gg3d", rp_config, rp_out;
    int rp_g = 0, rp_nn = 16;
    double rp_a = 0.0, rp_rcut = 4.0;
    std::vector<std::size_t> rp_nodes;
    auto* rp = app.add_subcommand("report", "graph diagnostics: degrees, components, spectrum");
    rp->add_option("--graph", rp_kind, "gg3d | margulis3d | cutoff | complete");
    rp->add_option("--g", rp_g, "grid subdivisions per axis");
    rp->add_option("--a", rp_a, "cell parameter (cutoff graphs)");
    rp->add_option("--config", rp_config, "composition config supplying g and a");
    rp->add_option("--r-cut", rp_rcut, "cutoff radius in Angstrom");
    rp->add_option("--max-neighbors", rp_nn, "nearest-neighbor cap for cutoff graphs");
    rp->add_option("--nodes", rp_nodes, "node ids whose neighbor lists are dumped");
    rp->add_option("--out", rp_out, "write the report JSON here");

    CLI11_PARSE(app, argc, argv);

    try {
        using namespace cspalloc;

        if (*bq) {
            ExperimentSpec spec = spec_from_config(bq_config);
            if (!bq_ff.empty()) spec.forcefield = load_forcefield(bq_ff);
            PositionSet ps = build_grid(GridSpec{spec.comp.g});
            ForceField ff = spec.forcefield ? *spec.forcefield
                                            : ForceField::coulomb_only(spec.comp.species.labels,
                                                                       spec.comp.species.charges);
            QTable q = build_q(ps, spec.comp.cell(), spec.comp.species, ff);
            write_qtable(q, bq_out);
            if (!bq_csv.empty()) write_qtable_csv(q, bq_csv);
            json out = {{"n", q.n}, {"k", q.k}, {"dim", q.dim()}, {"path", bq_out}};
            emit(out, false);
            return 0;
        }

        auto graph_from_flags = [&](const std::string& kind, const std::string& config, int g,
                                    double a, double rcut, int nn) {
            GraphChoice choice{kind, rcut, nn};
            if (!config.empty()) {
                ExperimentSpec spec = spec_from_config(config);
                PositionSet ps = build_grid(GridSpec{spec.comp.g});
                return build_graph(choice, ps, spec.comp.cell());
            }
            require(g >= 1, "pass --g or --config");
            if (kind == "cutoff") require(a > 0.0, "cutoff graphs need --a or --config");
            PositionSet ps = build_grid(GridSpec{g});
            return build_graph(choice, ps, UnitCell::cubic(a > 0.0 ? a : 1.0));
        };

        if (*gr) {
            CompGraph cg = graph_from_flags(g_kind, g_config, g_g, g_a, g_rcut, g_nn);
            fs::create_directories(g_out);
            write_graph_edgelist((fs::path(g_out) / "edges.txt").string(), cg);
            write_graph_json((fs::path(g_out) / "graph.json").string(), cg);
            emit(graph_metadata(cg), false);
            return 0;
        }

        if (*sv) {
            ExperimentSpec spec = build_spec(sf);
            ExperimentBundle b = run_experiment(spec);
            emit(b.summary, sf.quiet);
            bool hard_fail = !b.any_feasible;
            return hard_fail ? 1 : 0;
        }

        if (*orc) {
            ExperimentSpec spec = spec_from_config(or_config);
            if (or_budget > 0) spec.oracle.budget = or_budget;
            if (!or_cache.empty()) spec.oracle.cache_path = or_cache;
            spec.solver = "brute";
            spec.out_dir = or_out;
            ExperimentBundle b = run_experiment(spec);
            emit(b.summary, false);
            return b.any_feasible ? 0 : 1;
        }

        if (*rg) {
            std::printf("%.10g\n", rog(rg_ground, rg_found));
            return 0;
        }

        if (*rp) {
            CompGraph cg = graph_from_flags(rp_kind, rp_config, rp_g, rp_a, rp_rcut, rp_nn);
            json rep = graph_report(cg, rp_nodes);
            if (!rp_out.empty()) {
                std::ofstream out(rp_out);
                require(bool(out), "cannot write " + rp_out);
                out << rep.dump(2) << "\n";
            }
            emit(rep, false);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
