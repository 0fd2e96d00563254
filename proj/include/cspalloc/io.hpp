#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "graphs.hpp"
#include "solvers.hpp"

namespace cspalloc {

// A composition file pins one problem instance: cubic cell parameter,
// grid resolution, and the stoichiometry of one formula unit scaled by Z.
struct CompositionConfig {
    std::string name;
    double a = 0.0; // cell parameter, Angstrom
    int g = 0;      // grid subdivisions per axis
    int z = 1;      // formula units in the cell
    std::vector<long> per_formula;
    SpeciesSet species; // counts already scaled by z

    std::size_t n() const { return GridSpec{g}.n(); }
    UnitCell cell() const { return UnitCell::cubic(a); }
};

inline CompositionConfig composition_from_json(const nlohmann::json& j) {
    CompositionConfig c;
    c.name = j.value("name", "");
    require(j.contains("a") && j["a"].is_number(), "composition needs a cell parameter a");
    require(j.contains("g") && j["g"].is_number_integer(), "composition needs a grid size g");
    c.a = j["a"].get<double>();
    c.g = j["g"].get<int>();
    c.z = j.value("z", 1);
    require(c.a > 0.0, "cell parameter must be > 0");
    require(c.g >= 1, "grid size must be >= 1");
    require(c.z >= 1, "formula unit count must be >= 1");
    require(j.contains("species") && j["species"].is_array() && !j["species"].empty(),
            "composition needs a species array");
    for (const auto& sj : j["species"]) {
        require(sj.contains("label") && sj["label"].is_string(), "species entry needs a label");
        require(sj.contains("charge") && sj["charge"].is_number(),
                "species entry needs a charge");
        require(sj.contains("per_formula") && sj["per_formula"].is_number_integer(),
                "species entry needs a per_formula count");
        std::string label = sj["label"].get<std::string>();
        for (const auto& seen : c.species.labels)
            require(seen != label, "duplicate species label " + label);
        long pf = sj["per_formula"].get<long>();
        require(pf >= 0, "per_formula must be >= 0");
        c.species.labels.push_back(label);
        c.species.charges.push_back(sj["charge"].get<double>());
        c.per_formula.push_back(pf);
        c.species.counts.push_back(pf * c.z);
    }
    c.species.validate(c.n());
    double net = 0.0;
    for (std::size_t t = 0; t < c.species.k(); ++t)
        net += c.species.charges[t] * double(c.species.counts[t]);
    require(std::abs(net) < 1e-9, "composition is not charge neutral (net " +
                                      std::to_string(net) + " e)");
    return c;
}

inline CompositionConfig load_composition(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad composition file " + path + ": " + e.what());
    }
    return composition_from_json(j);
}

inline nlohmann::json composition_to_json(const CompositionConfig& c) {
    nlohmann::json j;
    j["name"] = c.name;
    j["a"] = c.a;
    j["g"] = c.g;
    j["z"] = c.z;
    j["species"] = nlohmann::json::array();
    for (std::size_t t = 0; t < c.species.k(); ++t)
        j["species"].push_back({{"label", c.species.labels[t]},
                                {"charge", c.species.charges[t]},
                                {"per_formula", c.per_formula[t]}});
    return j;
}

inline void save_composition(const std::string& path, const CompositionConfig& c) {
    std::ofstream out(path);
    require(bool(out), "cannot write " + path);
    out << composition_to_json(c).dump(2) << "\n";
}

namespace detail {

inline std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

} // namespace detail

// Extended-XYZ export of the occupied positions: count line, a comment
// line carrying the lattice, then one "<label> x y z" line per atom in
// Cartesian Angstrom. Voids are omitted.
inline void write_allocation_xyz(const std::string& path, const Allocation& x,
                                 const PositionSet& positions, const UnitCell& cell,
                                 const std::vector<std::string>& labels) {
    require(x.assign.size() == positions.frac.size(),
            "allocation does not match the position set");
    const int k = static_cast<int>(labels.size());
    std::size_t occupied = 0;
    for (int t : x.assign) {
        require(t >= 0 && t <= k, "allocation references an unknown species");
        if (t < k) ++occupied;
    }
    std::ofstream out(path);
    require(bool(out), "cannot write " + path);
    out << occupied << "\n";
    out << "Lattice=\"";
    for (int r = 0; r < 3; ++r)
        for (int cidx = 0; cidx < 3; ++cidx) {
            out << detail::fmt_g(cell.m[r][cidx]);
            if (r != 2 || cidx != 2) out << " ";
        }
    out << "\" Properties=species:S:1:pos:R:3\n";
    for (std::size_t p = 0; p < x.assign.size(); ++p) {
        const int t = x.assign[p];
        if (t == k) continue;
        Vec3 r = cell.cart(positions.frac[p]);
        out << labels[t] << " " << detail::fmt_g(r.x) << " " << detail::fmt_g(r.y) << " "
            << detail::fmt_g(r.z) << "\n";
    }
    require(bool(out), "short write on " + path);
}

inline nlohmann::json allocation_to_json(const Allocation& x, const SpeciesSet& species, int g,
                                         double a,
                                         std::optional<double> energy = std::nullopt) {
    nlohmann::json j;
    j["assign"] = x.assign;
    j["labels"] = species.labels;
    j["counts"] = species.counts;
    j["g"] = g;
    j["a"] = a;
    if (energy) j["energy"] = *energy;
    return j;
}

inline Allocation allocation_from_json(const nlohmann::json& j) {
    require(j.contains("assign") && j["assign"].is_array(), "allocation needs an assign array");
    Allocation x;
    for (const auto& v : j["assign"]) {
        require(v.is_number_integer(), "assign entries must be integers");
        x.assign.push_back(v.get<int>());
    }
    return x;
}

inline void write_allocation_json(const std::string& path, const Allocation& x,
                                  const SpeciesSet& species, int g, double a,
                                  std::optional<double> energy = std::nullopt) {
    std::ofstream out(path);
    require(bool(out), "cannot write " + path);
    out << allocation_to_json(x, species, g, a, energy).dump(2) << "\n";
}

inline Allocation load_allocation_json(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad allocation file " + path + ": " + e.what());
    }
    return allocation_from_json(j);
}

// One "u v" line per undirected edge.
inline void write_graph_edgelist(const std::string& path, const CompGraph& g) {
    std::ofstream out(path);
    require(bool(out), "cannot write " + path);
    for (const auto& [u, v] : g.edges) out << u << " " << v << "\n";
    require(bool(out), "short write on " + path);
}

inline nlohmann::json graph_metadata(const CompGraph& g) {
    nlohmann::json j;
    j["kind"] = g.kind;
    j["g"] = g.g;
    j["nodes"] = g.n_nodes;
    j["edges"] = g.edges.size();
    j["warnings"] = g.warnings;
    return j;
}

inline void write_graph_json(const std::string& path, const CompGraph& g) {
    std::ofstream out(path);
    require(bool(out), "cannot write " + path);
    out << graph_metadata(g).dump(2) << "\n";
}

// Labeled-column CSV for solver traces. Rows are fixed-width storage; only
// the labeled prefix is emitted, so four-column classical traces and
// five-column training traces share one writer.
inline void write_trace_csv(const std::string& path, const std::vector<std::string>& columns,
                            const std::vector<TraceRow>& rows) {
    const std::size_t width = std::tuple_size<decltype(TraceRow::v)>::value;
    require(!columns.empty() && columns.size() <= width,
            "trace column labels do not fit the row width");
    std::ofstream out(path);
    require(bool(out), "cannot write " + path);
    for (std::size_t i = 0; i < columns.size(); ++i)
        out << columns[i] << (i + 1 < columns.size() ? "," : "\n");
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < columns.size(); ++i)
            out << detail::fmt_g(row.v[i]) << (i + 1 < columns.size() ? "," : "\n");
    }
    require(bool(out), "short write on " + path);
}

} // namespace cspalloc
