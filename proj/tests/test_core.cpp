#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <numbers>

#include "cspalloc/core.hpp"

using namespace cspalloc;

TEST_CASE("placement index round trip") {
    const std::size_t n = 64;
    for (std::size_t p : {0ul, 5ul, 63ul})
        for (std::size_t t : {0ul, 1ul, 3ul}) {
            std::size_t a = placement_index(p, t, n);
            REQUIRE(placement_position(a, n) == p);
            REQUIRE(placement_species(a, n) == t);
        }
    REQUIRE(placement_index(0, 0, n) == 0);
    REQUIRE(placement_index(63, 3, n) == 3 * 64 + 63);
}

TEST_CASE("grid coordinates round trip and wrap") {
    GridSpec grid{4};
    REQUIRE(grid.n() == 64);
    for (std::size_t p = 0; p < grid.n(); ++p) {
        auto c = grid.coords(p);
        REQUIRE(grid.index(c[0], c[1], c[2]) == p);
    }
    REQUIRE(grid.index(-1, 0, 0) == grid.index(3, 0, 0));
    REQUIRE(grid.index(4, 5, -3) == grid.index(0, 1, 1));
}

TEST_CASE("build_grid emits fractional lattice points") {
    auto ps = build_grid(GridSpec{2});
    REQUIRE(ps.frac.size() == 8);
    REQUIRE(ps.frac[0].x == 0.0);
    REQUIRE(ps.frac[1].x == 0.5);
    REQUIRE(ps.frac[1].y == 0.0);
    // p = x + g*(y + g*z) puts (0,1,1) at index 6
    REQUIRE(ps.frac[6].x == 0.0);
    REQUIRE(ps.frac[6].y == 0.5);
    REQUIRE(ps.frac[6].z == 0.5);
}

TEST_CASE("min image distance wraps across the boundary") {
    UnitCell cell = UnitCell::cubic(4.0);
    REQUIRE(min_image_distance(cell, {0, 0, 0}, {0.9, 0, 0}) == Catch::Approx(0.4).epsilon(1e-12));
    REQUIRE(min_image_distance(cell, {0.9, 0, 0}, {0, 0, 0}) == Catch::Approx(0.4).epsilon(1e-12));
    UnitCell small = UnitCell::cubic(2.0);
    REQUIRE(min_image_distance(small, {0, 0, 0}, {0.5, 0.5, 0.5}) ==
            Catch::Approx(std::sqrt(3.0)).epsilon(1e-12));
    REQUIRE(min_image_distance(cell, {0.25, 0.25, 0.25}, {0.25, 0.25, 0.25}) == 0.0);
}

TEST_CASE("unit cell volume and reciprocal rows") {
    UnitCell cell = UnitCell::cubic(3.9);
    REQUIRE(cell.volume() == Catch::Approx(3.9 * 3.9 * 3.9));
    auto rec = cell.reciprocal_rows();
    // k . L = 2 pi delta for a cubic cell
    REQUIRE(rec[0][0] == Catch::Approx(2.0 * std::numbers::pi / 3.9));
    REQUIRE(rec[0][1] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(rec[1][1] == Catch::Approx(2.0 * std::numbers::pi / 3.9));
}

TEST_CASE("count_feasible matches frozen multinomials") {
    REQUIRE(count_feasible(64, {1, 1, 3}) == mpz_class("152490240"));
    REQUIRE(count_feasible(4, {4}) == 1);
    REQUIRE(count_feasible(512, {1, 1, 3}) == mpz_class("5750310307840"));
    REQUIRE(count_feasible(6, {2, 1}) == 60);
    // floor(log10) for the large cells, frozen from exact evaluation
    REQUIRE(std::floor(log10_count(count_feasible(512, {8, 8, 24}))) == 74.0);
    REQUIRE(std::floor(log10_count(count_feasible(512, {32, 48}))) == 117.0);
    REQUIRE(std::floor(log10_count(count_feasible(512, {24, 16, 24, 96}))) == 210.0);
    REQUIRE_THROWS_AS(count_feasible(4, {3, 2}), ConfigError);
}

TEST_CASE("validate_allocation verdicts") {
    Allocation x;
    x.assign = {0, 2, 1, 2, 2};
    auto ok = validate_allocation(x, 5, {1, 1});
    REQUIRE(ok.ok);
    REQUIRE(ok.counts == std::vector<long>{1, 1});

    auto bad_count = validate_allocation(x, 5, {2, 1});
    REQUIRE_FALSE(bad_count.ok);
    REQUIRE(bad_count.detail.find("species 0") != std::string::npos);

    Allocation wrong_len;
    wrong_len.assign = {0, 1};
    REQUIRE_FALSE(validate_allocation(wrong_len, 5, {1, 1}).ok);

    Allocation out_of_range;
    out_of_range.assign = {0, 5, 2, 2, 2};
    REQUIRE_FALSE(validate_allocation(out_of_range, 5, {1, 1}).ok);
}

TEST_CASE("random_feasible respects stoichiometry and seed") {
    Rng rng(123);
    std::vector<long> c{2, 3};
    for (int i = 0; i < 50; ++i) {
        Allocation x = random_feasible(10, c, rng);
        REQUIRE(validate_allocation(x, 10, c).ok);
    }
    Rng a(7), b(7);
    REQUIRE(random_feasible(12, c, a).assign == random_feasible(12, c, b).assign);
}

TEST_CASE("random_feasible is roughly uniform over states") {
    // n=3, one atom: three states, 12000 draws, 3 sigma binomial band
    Rng rng(99);
    std::map<int, int> freq;
    const int trials = 12000;
    for (int i = 0; i < trials; ++i) {
        Allocation x = random_feasible(3, {1}, rng);
        for (int p = 0; p < 3; ++p)
            if (x.assign[p] == 0) ++freq[p];
    }
    const double p = 1.0 / 3.0;
    const double sigma = std::sqrt(p * (1 - p) * trials);
    for (auto& [state, count] : freq) {
        REQUIRE(std::abs(count - trials * p) < 3.0 * sigma);
    }
}

TEST_CASE("onehot layout") {
    Allocation x;
    x.assign = {1, 2, 0};
    Mat s = onehot(x, 2);
    REQUIRE(s.rows == 3);
    REQUIRE(s.cols == 3);
    REQUIRE(s(0, 1) == 1.0);
    REQUIRE(s(1, 2) == 1.0);
    REQUIRE(s(2, 0) == 1.0);
    double sum = 0;
    for (double v : s.a) sum += v;
    REQUIRE(sum == 3.0);
}

TEST_CASE("rng uniform01 range and determinism") {
    Rng r1(42), r2(42);
    for (int i = 0; i < 1000; ++i) {
        double u = r1.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        REQUIRE(u == r2.uniform01());
    }
}

TEST_CASE("rng uniform_int stays in bounds") {
    Rng r(5);
    for (int i = 0; i < 2000; ++i) {
        auto v = r.uniform_int(7);
        REQUIRE(v < 7);
    }
    REQUIRE(r.uniform_int(1) == 0);
}

TEST_CASE("gumbel inverse CDF fixed point") {
    // u = 1/e maps to exactly zero up to floating noise
    REQUIRE(std::abs(gumbel_from_uniform(std::exp(-1.0))) < 1e-12);
    REQUIRE(gumbel_from_uniform(1e-320) == gumbel_from_uniform(1e-300));
    REQUIRE(std::isfinite(gumbel_from_uniform(1.0)));
    REQUIRE(std::isfinite(gumbel_from_uniform(0.0)));
}

TEST_CASE("gumbel sample moments") {
    Rng r(2024);
    const int n = 200000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        double g = r.gumbel();
        sum += g;
        sum2 += g * g;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    const double euler = 0.5772156649015329;
    const double ref_var = std::numbers::pi * std::numbers::pi / 6.0;
    // 3 sigma bands for the estimators
    REQUIRE(std::abs(mean - euler) < 3.0 * std::sqrt(ref_var / n));
    REQUIRE(std::abs(var - ref_var) < 3.0 * 6.0e-3);
}
