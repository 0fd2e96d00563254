#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "energy.hpp"

namespace cspalloc {

static_assert(std::endian::native == std::endian::little,
              "table files are little-endian; big-endian hosts are unsupported");

// Binary table layout: 8-byte magic, u32 version, u64 n, u64 k, u32 vec
// convention id (1 = placement (p,t) -> t*n+p), then the upper triangle
// of the symmetric matrix row-major as f64, diagonal included.
inline constexpr char qtable_magic[8] = {'Q', 'T', 'A', 'B', 'B', 'I', 'N', '\0'};
inline constexpr std::uint32_t qtable_version = 1;
inline constexpr std::uint32_t qtable_vec_convention = 1;

inline void write_qtable(const QTable& qt, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open " + path + " for writing");
    f.write(qtable_magic, 8);
    auto put32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto put64 = [&](std::uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
    put32(qtable_version);
    put64(qt.n);
    put64(qt.k);
    put32(qtable_vec_convention);
    const std::size_t dim = qt.dim();
    std::vector<double> tri;
    tri.reserve(dim * (dim + 1) / 2);
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = a; b < dim; ++b) tri.push_back(qt.entry(a, b));
    f.write(reinterpret_cast<const char*>(tri.data()),
            static_cast<std::streamsize>(tri.size() * sizeof(double)));
    require(f.good(), "write failed for " + path);
}

inline QTable read_qtable(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    require(f.good() && std::equal(magic, magic + 8, qtable_magic), path + ": bad magic");
    auto get32 = [&] { std::uint32_t v = 0; f.read(reinterpret_cast<char*>(&v), 4); return v; };
    auto get64 = [&] { std::uint64_t v = 0; f.read(reinterpret_cast<char*>(&v), 8); return v; };
    std::uint32_t version = get32();
    std::uint64_t n = get64();
    std::uint64_t k = get64();
    std::uint32_t conv = get32();
    require(version == qtable_version, path + ": unsupported version");
    require(conv == qtable_vec_convention, path + ": unsupported vec convention");
    require(n >= 1 && k >= 1 && n * (k + 1) <= dense_q_limit, path + ": bad dimensions");
    QTable qt(n, k);
    const std::size_t dim = qt.dim();
    std::vector<double> tri(dim * (dim + 1) / 2);
    f.read(reinterpret_cast<char*>(tri.data()),
           static_cast<std::streamsize>(tri.size() * sizeof(double)));
    require(f.good(), path + ": truncated payload");
    std::size_t idx = 0;
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = a; b < dim; ++b) {
            qt.at(a, b) = tri[idx];
            qt.at(b, a) = tri[idx];
            ++idx;
        }
    qt.provenance = "file:" + path;
    return qt;
}

// Plain dense matrix dump, one row per line, for small tables.
inline void write_qtable_csv(const QTable& qt, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), "cannot open " + path + " for writing");
    const std::size_t dim = qt.dim();
    char buf[32];
    for (std::size_t a = 0; a < dim; ++a) {
        for (std::size_t b = 0; b < dim; ++b) {
            std::snprintf(buf, sizeof buf, "%.17g", qt.entry(a, b));
            f << buf << (b + 1 < dim ? "," : "\n");
        }
    }
    require(f.good(), "write failed for " + path);
}

// Force-field JSON: {"charges": {label: q}, "pairs": [{"species": [l1, l2],
// "A":, "rho":, "C":}], optional "r_cut", "alpha", "k_cut"}. Every species
// pair the table builder touches must be listed.
inline ForceField load_forcefield_json(const nlohmann::json& j) {
    require(j.contains("charges") && j["charges"].is_object(),
            "force field needs a charges object");
    ForceField ff;
    for (auto it = j["charges"].begin(); it != j["charges"].end(); ++it) {
        ff.species.push_back(it.key());
        require(it.value().is_number(), "charge for " + it.key() + " must be a number");
        ff.charges.push_back(it.value().get<double>());
    }
    const std::size_t k = ff.species.size();
    ff.pairs.assign(k * k, std::nullopt);
    if (j.contains("pairs")) {
        require(j["pairs"].is_array(), "pairs must be an array");
        for (const auto& pj : j["pairs"]) {
            require(pj.contains("species") && pj["species"].is_array() &&
                        pj["species"].size() == 2,
                    "each pair needs a two-element species array");
            int t1 = ff.species_index(pj["species"][0].get<std::string>());
            int t2 = ff.species_index(pj["species"][1].get<std::string>());
            require(t1 >= 0 && t2 >= 0, "pair references a species with no charge entry");
            BuckinghamParams bp;
            bp.A = pj.value("A", 0.0);
            bp.rho = pj.value("rho", 1.0);
            bp.C = pj.value("C", 0.0);
            require(bp.A == 0.0 || bp.rho > 0.0, "rho must be > 0 when A != 0");
            ff.set_pair(static_cast<std::size_t>(t1), static_cast<std::size_t>(t2), bp);
        }
    }
    if (j.contains("r_cut")) ff.r_cut_override = j["r_cut"].get<double>();
    if (j.contains("alpha")) ff.alpha_override = j["alpha"].get<double>();
    if (j.contains("k_cut")) ff.k_cut_override = j["k_cut"].get<double>();
    return ff;
}

inline ForceField load_forcefield(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return load_forcefield_json(j);
}

} // namespace cspalloc
