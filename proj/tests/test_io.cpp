#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <cspalloc/experiment.hpp>
#include <cspalloc/io.hpp>

using namespace cspalloc;

namespace {

std::filesystem::path temp_dir(const char* tag) {
    auto p = std::filesystem::temp_directory_path() / (std::string("cspalloc_io_") + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

nlohmann::json tiny_neutral_composition() {
    return nlohmann::json{
        {"name", "binary test salt"},
        {"a", 4.0},
        {"g", 2},
        {"z", 1},
        {"species",
         nlohmann::json::array({{{"label", "A"}, {"charge", 1.0}, {"per_formula", 2}},
                                {{"label", "B"}, {"charge", -1.0}, {"per_formula", 2}}})}};
}

} // namespace

TEST_CASE("composition files parse, validate, and round-trip") {
    CompositionConfig c = composition_from_json(tiny_neutral_composition());
    CHECK(c.n() == 8);
    CHECK(c.species.counts == std::vector<long>{2, 2});
    CHECK(c.cell().m[0][0] == 4.0);

    auto dir = temp_dir("comp");
    std::string path = (dir / "c.json").string();
    save_composition(path, c);
    CompositionConfig back = load_composition(path);
    CHECK(back.name == c.name);
    CHECK(back.species.labels == c.species.labels);
    CHECK(back.species.counts == c.species.counts);
    CHECK(back.per_formula == c.per_formula);

    SECTION("rejections") {
        auto j = tiny_neutral_composition();
        j.erase("a");
        CHECK_THROWS_AS(composition_from_json(j), ConfigError);

        j = tiny_neutral_composition();
        j["species"][1]["charge"] = -0.5; // net charge
        CHECK_THROWS_AS(composition_from_json(j), ConfigError);

        j = tiny_neutral_composition();
        j["species"][1]["label"] = "A"; // duplicate
        CHECK_THROWS_AS(composition_from_json(j), ConfigError);

        j = tiny_neutral_composition();
        j["species"][0]["per_formula"] = 9; // exceeds 8 positions
        CHECK_THROWS_AS(composition_from_json(j), ConfigError);

        CHECK_THROWS_AS(load_composition((dir / "absent.json").string()), ConfigError);
        std::ofstream(dir / "garbage.json") << "{not json";
        CHECK_THROWS_AS(load_composition((dir / "garbage.json").string()), ConfigError);
    }
}

TEST_CASE("shipped composition data loads and matches the published cells") {
    struct Row {
        const char* file;
        std::size_t n;
        std::vector<long> counts;
    };
    const std::vector<Row> rows = {
        {"srtio3_z1_g4.json", 64, {1, 1, 3}},
        {"srtio3_z1_g8.json", 512, {1, 1, 3}},
        {"srtio3_z8.json", 512, {8, 8, 24}},
        {"srtio3_z27.json", 512, {27, 27, 81}},
        {"y2o3_z16.json", 512, {32, 48}},
        {"y2ti2o7_z8.json", 512, {16, 16, 56}},
        {"mgal2o4_z8.json", 512, {8, 16, 32}},
        {"ca3al2si3o12_z8.json", 512, {24, 16, 24, 96}},
    };
    for (const auto& r : rows) {
        CompositionConfig c =
            load_composition(std::string(CSPALLOC_DATA_DIR "/compositions/") + r.file);
        INFO(r.file);
        CHECK(c.n() == r.n);
        CHECK(c.species.counts == r.counts);
    }
}

TEST_CASE("occupied positions export as extended XYZ") {
    CompositionConfig c = composition_from_json(tiny_neutral_composition());
    PositionSet ps = build_grid(GridSpec{c.g});
    Allocation x;
    x.assign = {0, 2, 1, 2, 0, 2, 1, 2}; // two A, two B, four voids

    auto dir = temp_dir("xyz");
    std::string path = (dir / "a.xyz").string();
    write_allocation_xyz(path, x, ps, c.cell(), c.species.labels);

    std::istringstream in(slurp(path));
    std::string line;
    std::getline(in, line);
    CHECK(line == "4");
    std::getline(in, line);
    CHECK(line.find("Lattice=\"4 0 0 0 4 0 0 0 4\"") != std::string::npos);
    CHECK(line.find("Properties=species:S:1:pos:R:3") != std::string::npos);

    std::vector<std::string> atoms;
    while (std::getline(in, line))
        if (!line.empty()) atoms.push_back(line);
    REQUIRE(atoms.size() == 4);
    CHECK(atoms[0] == "A 0 0 0");     // position 0: (0,0,0)
    CHECK(atoms[1] == "B 0 2 0");     // position 2: (0,1,0) * a/g
    CHECK(atoms[2] == "A 0 0 2");     // position 4: (0,0,1)
    CHECK(atoms[3] == "B 0 2 2");     // position 6

    Allocation bad = x;
    bad.assign[0] = 7;
    CHECK_THROWS_AS(write_allocation_xyz(path, bad, ps, c.cell(), c.species.labels),
                    ConfigError);
}

TEST_CASE("allocation JSON round-trips the assignment") {
    CompositionConfig c = composition_from_json(tiny_neutral_composition());
    Allocation x;
    x.assign = {0, 0, 1, 1, 2, 2, 2, 2};
    auto dir = temp_dir("ajson");
    std::string path = (dir / "a.json").string();
    write_allocation_json(path, x, c.species, c.g, c.a, -3.25);

    Allocation back = load_allocation_json(path);
    CHECK(back.assign == x.assign);

    nlohmann::json j;
    std::ifstream(path) >> j;
    CHECK(j["energy"].get<double>() == -3.25);
    CHECK(j["labels"].get<std::vector<std::string>>() == c.species.labels);
    CHECK(j["g"].get<int>() == 2);
}

TEST_CASE("graph exports: edge list and metadata") {
    CompGraph g = gabber_galil_3d(2);
    auto dir = temp_dir("graph");
    std::string el = (dir / "g.txt").string();
    write_graph_edgelist(el, g);

    std::istringstream in(slurp(el));
    std::size_t lines = 0;
    std::uint32_t u, v;
    while (in >> u >> v) {
        CHECK(u < v);
        CHECK(v < 8);
        ++lines;
    }
    CHECK(lines == g.edges.size());

    std::string mj = (dir / "g.json").string();
    write_graph_json(mj, g);
    nlohmann::json meta;
    std::ifstream(mj) >> meta;
    CHECK(meta["nodes"].get<std::size_t>() == 8);
    CHECK(meta["edges"].get<std::size_t>() == g.edges.size());
    CHECK(meta["kind"].get<std::string>() == g.kind);
}

TEST_CASE("trace CSV carries labeled columns") {
    std::vector<TraceRow> rows = {{{1.0, -2.5, -2.5, 0.0, 3.0}}, {{2.0, -3.0, -3.0, 1.0, 4.0}}};
    auto dir = temp_dir("csv");
    std::string path = (dir / "t.csv").string();
    write_trace_csv(path, {"step", "current_e", "best_e", "flag", "extra"}, rows);
    std::string text = slurp(path);
    CHECK(text == "step,current_e,best_e,flag,extra\n1,-2.5,-2.5,0,3\n2,-3,-3,1,4\n");

    // a shorter label set emits only that prefix of each row
    write_trace_csv(path, {"step", "current_e", "best_e", "temperature"}, rows);
    text = slurp(path);
    CHECK(text == "step,current_e,best_e,temperature\n1,-2.5,-2.5,0\n2,-3,-3,1\n");

    CHECK_THROWS_AS(write_trace_csv(path, {"a", "b", "c", "d", "e", "f"}, rows), ConfigError);
    CHECK_THROWS_AS(write_trace_csv(path, {}, rows), ConfigError);
}

TEST_CASE("relative optimality gap reproduces the reported table values") {
    CHECK(rog(-158.76, -158.76) == 0.0);
    CHECK(rog(-1268.67, -1179.67) == Catch::Approx(0.07).margin(0.005));
    CHECK(rog(-2199.99, -1986.79) == Catch::Approx(0.10).margin(0.005));
    CHECK(rog(-3093.53, -2949.29) == Catch::Approx(0.05).margin(0.005));
    CHECK_THROWS_AS(rog(0.0, -1.0), NumericError);
    RogRecord r = make_rog(-2.0, -1.0);
    CHECK(r.rog == 0.5);
    CHECK(r.e_ground == -2.0);
}

TEST_CASE("experiment specs finalize their shot plan") {
    ExperimentSpec s;
    s.comp = composition_from_json(tiny_neutral_composition());
    s.solver = "sa";
    s.seed = 99;
    s.finalize();
    CHECK(s.shots == 10);
    CHECK(s.seeds.size() == 10);
    CHECK(s.seeds[0] == splitmix64(99));
    CHECK(s.seeds[1] == splitmix64(100));

    ExperimentSpec g;
    g.comp = s.comp;
    g.solver = "gnt";
    g.finalize();
    CHECK(g.shots == 5);

    ExperimentSpec b;
    b.comp = s.comp;
    b.solver = "brute";
    b.shots = 7; // forced back to one
    b.finalize();
    CHECK(b.shots == 1);
    CHECK(b.seeds.size() == 1);

    ExperimentSpec bad;
    bad.comp = s.comp;
    bad.solver = "sa";
    bad.shots = 3;
    bad.seeds = {1, 2}; // mismatched
    CHECK_THROWS_AS(bad.finalize(), ConfigError);

    ExperimentSpec unk;
    unk.comp = s.comp;
    unk.solver = "quantum";
    CHECK_THROWS_AS(unk.finalize(), ConfigError);
}

TEST_CASE("experiment config JSON: profiles set budgets, fields override") {
    nlohmann::json j;
    j["composition"] = tiny_neutral_composition();
    j["profile"] = "paper";
    j["solver"] = "sa";
    ExperimentSpec s = experiment_from_json(j);
    CHECK(s.sa.max_iter == 200000);
    CHECK(s.greedy.max_iter == 200000);
    CHECK(s.gnt.epochs == 100000);

    j["profile"] = "test";
    j["sa"] = {{"max_iter", 1234}, {"cool_alpha", 0.9}};
    j["seeds"] = {5, 6, 7};
    j["shots"] = 3;
    j["ground_energy"] = -2.5;
    s = experiment_from_json(j);
    CHECK(s.sa.max_iter == 1234);
    CHECK(s.sa.cool_alpha == 0.9);
    CHECK(s.gnt.epochs == 2000);
    CHECK(s.seeds == std::vector<std::uint64_t>{5, 6, 7});
    REQUIRE(s.ground_energy.has_value());
    CHECK(*s.ground_energy == -2.5);

    j["profile"] = "fast";
    CHECK_THROWS_AS(experiment_from_json(j), ConfigError);
}

TEST_CASE("graph choice builds every advertised kind") {
    PositionSet ps = build_grid(GridSpec{2});
    UnitCell cell = UnitCell::cubic(4.0);
    CHECK(build_graph({"gg3d"}, ps, cell).kind == "gg3d");
    CHECK(build_graph({"margulis3d"}, ps, cell).kind == "margulis3d");
    CHECK(build_graph({"cutoff", 3.0, 6}, ps, cell).kind == "cutoff");
    CHECK(build_graph({"complete"}, ps, cell).n_nodes == 8);
    CHECK_THROWS_AS(build_graph({"torus"}, ps, cell), ConfigError);
}

TEST_CASE("experiment bundles are deterministic and self-verifying") {
    ExperimentSpec spec;
    spec.comp = composition_from_json(tiny_neutral_composition());
    spec.solver = "sa";
    spec.sa.max_iter = 4000;
    spec.shots = 2;
    spec.seed = 12;
    auto dir = temp_dir("bundle");
    spec.out_dir = (dir / "run").string();

    ExperimentBundle b = run_experiment(spec);
    REQUIRE(b.any_feasible);
    CHECK(b.shots.size() == 2);
    CHECK(b.summary["feasible_shots"].get<int>() == 2);
    CHECK(b.summary["best_energy"].get<double>() == b.best_energy);
    CHECK(b.summary.contains("per_shot"));
    CHECK(!b.summary.contains("total_ms")); // timings live in the separate file
    CHECK(b.timing["per_shot_ms"].size() == 2);
    CHECK(b.space_log10 == Catch::Approx(std::log10(420.0)).margin(1e-9));

    // best-of-shots really is the minimum over the recorded shots
    for (const auto& s : b.shots) {
        REQUIRE(s.error.empty());
        CHECK(s.res.best_energy >= b.best_energy);
    }

    CHECK(std::filesystem::exists(dir / "run" / "summary.json"));
    CHECK(std::filesystem::exists(dir / "run" / "timing.json"));
    CHECK(std::filesystem::exists(dir / "run" / "trace_shot_0.csv"));
    CHECK(std::filesystem::exists(dir / "run" / "trace_shot_1.csv"));
    CHECK(std::filesystem::exists(dir / "run" / "best.xyz"));
    CHECK(std::filesystem::exists(dir / "run" / "best.json"));
    CHECK(std::filesystem::exists(dir / "run" / "plot_steps.csv"));
    CHECK_FALSE(std::filesystem::exists(dir / "run" / "plot_rog.csv")); // no ground energy

    std::string first_summary = slurp((dir / "run" / "summary.json").string());
    ExperimentBundle b2 = run_experiment(spec);
    std::string second_summary = slurp((dir / "run" / "summary.json").string());
    CHECK(first_summary == second_summary);
    CHECK(b2.best_energy == b.best_energy);

    SECTION("ground energy produces a gap and its plot row") {
        spec.ground_energy = b.best_energy;
        ExperimentBundle g = run_experiment(spec);
        REQUIRE(g.gap.has_value());
        CHECK(g.gap->rog == 0.0);
        CHECK(g.summary["rog"].get<double>() == 0.0);
        CHECK(std::filesystem::exists(dir / "run" / "plot_rog.csv"));
        std::string plot = slurp((dir / "run" / "plot_rog.csv").string());
        CHECK(plot.find("space_log10,rog") == 0);
    }
}

TEST_CASE("brute-force experiments agree with every heuristic bundle") {
    ExperimentSpec spec;
    spec.comp = composition_from_json(tiny_neutral_composition());
    spec.solver = "brute";
    ExperimentBundle oracle = run_experiment(spec);
    REQUIRE(oracle.any_feasible);

    ExperimentSpec sa = spec;
    sa.solver = "sa";
    sa.shots = 3;
    sa.sa.max_iter = 5000;
    sa.ground_energy = oracle.best_energy;
    ExperimentBundle found = run_experiment(sa);
    REQUIRE(found.any_feasible);
    CHECK(found.best_energy >= oracle.best_energy - 1e-9);
    REQUIRE(found.gap.has_value());
    CHECK(found.gap->rog == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("failed shots are recorded without sinking the bundle") {
    ExperimentSpec spec;
    spec.comp = composition_from_json(tiny_neutral_composition());
    spec.solver = "gnt";
    spec.shots = 2;
    spec.gnt.epochs = 0; // rejected inside each shot
    ExperimentBundle b = run_experiment(spec);
    CHECK_FALSE(b.any_feasible);
    REQUIRE(b.shots.size() == 2);
    for (const auto& s : b.shots) CHECK(!s.error.empty());
    CHECK(b.summary["feasible_shots"].get<int>() == 0);
    CHECK(b.summary["per_shot"][0].contains("error"));
}

TEST_CASE("a small neural run goes end to end through the bundle") {
    ExperimentSpec spec;
    spec.comp = composition_from_json(tiny_neutral_composition());
    spec.solver = "gnt";
    spec.shots = 1;
    spec.seed = 3;
    spec.gnt.epochs = 150;
    spec.gnt.d0 = 8;
    spec.gnt.dh = 8;
    ExperimentBundle b = run_experiment(spec);
    REQUIRE(b.shots.size() == 1);
    REQUIRE(b.shots[0].error.empty());
    if (b.any_feasible) {
        AllocationVerdict v =
            validate_allocation(b.shots[0].res.best_allocation, 8, spec.comp.species.counts);
        CHECK(v.ok);
    }
}

TEST_CASE("graph reports carry structure diagnostics") {
    CompGraph g = gabber_galil_3d(2);
    nlohmann::json r = graph_report(g, {0, 3});
    CHECK(r["nodes"].get<std::size_t>() == 8);
    CHECK(r["components"].get<std::size_t>() == 1);
    CHECK(r["degree"]["max"].get<std::size_t>() >= r["degree"]["min"].get<std::size_t>());
    CHECK(r["spectral"]["available"].get<bool>());
    CHECK(r["neighbors"].contains("0"));
    CHECK(r["neighbors"].contains("3"));
    CHECK_THROWS_AS(graph_report(g, {99}), ConfigError);

    CompGraph m2 = margulis_3d(2);
    nlohmann::json rm = graph_report(m2);
    CHECK(rm["degree"]["max"].get<std::size_t>() <= 3);

    // sub-spacing cutoff: every node isolated, warning surfaced
    PositionSet ps = build_grid(GridSpec{2});
    CompGraph lonely = radius_cutoff_graph(ps, UnitCell::cubic(4.0), 0.5, 4);
    nlohmann::json rl = graph_report(lonely);
    CHECK(rl["edges"].get<std::size_t>() == 0);
    CHECK(!rl["warnings"].empty());
}
