#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include <cspalloc/energy.hpp>
#include <cspalloc/solvers.hpp>

using namespace cspalloc;

namespace {

// Exhaustive reference minimum over every feasible allocation, via
// lexicographic permutations of the sorted species multiset.
double exhaustive_min(const QTable& q, const std::vector<long>& counts) {
    std::vector<int> v;
    for (std::size_t t = 0; t < counts.size(); ++t)
        v.insert(v.end(), counts[t], static_cast<int>(t));
    v.resize(q.n, static_cast<int>(q.k));
    std::sort(v.begin(), v.end());
    double best = std::numeric_limits<double>::infinity();
    do {
        Allocation x{v};
        best = std::min(best, energy_hard(x, q));
    } while (std::next_permutation(v.begin(), v.end()));
    return best;
}

std::vector<std::size_t> occupied_scan(const Allocation& x, std::size_t k) {
    std::vector<std::size_t> occ;
    for (std::size_t p = 0; p < x.n(); ++p)
        if (x.assign[p] != static_cast<int>(k)) occ.push_back(p);
    return occ;
}

} // namespace

TEST_CASE("metropolis acceptance rule") {
    // downhill always passes, even with u near 1
    CHECK(metropolis_accept(5.0, 4.9, 0.01, 0.999999));
    // equal energy: exp(0) = 1, so any u < 1 passes
    CHECK(metropolis_accept(2.0, 2.0, 1.0, 0.9999));
    // uphill by 1 at T=1: threshold exp(-1) = 0.36788
    CHECK(metropolis_accept(0.0, 1.0, 1.0, 0.36));
    CHECK_FALSE(metropolis_accept(0.0, 1.0, 1.0, 0.37));
    // colder temperature suppresses the same uphill move
    CHECK_FALSE(metropolis_accept(0.0, 1.0, 0.1, 0.01));
    CHECK_THROWS_AS(metropolis_accept(0.0, 1.0, 0.0, 0.5), NumericError);
    CHECK_THROWS_AS(metropolis_accept(0.0, 1.0, -2.0, 0.5), NumericError);
}

TEST_CASE("metropolis frequency matches exp(-dE/T) at the half-acceptance point") {
    // dE = T ln 2 gives acceptance probability exactly 1/2
    const double t = 0.7;
    const double de = t * std::log(2.0);
    Rng rng(777);
    const int trials = 100000;
    int accepted = 0;
    for (int i = 0; i < trials; ++i)
        if (metropolis_accept(1.0, 1.0 + de, t, rng.uniform01())) ++accepted;
    double sigma = std::sqrt(trials * 0.25);
    CHECK(std::abs(accepted - trials / 2) <= 3.0 * sigma);
}

TEST_CASE("move proposals respect the strategy and instance structure") {
    QTable q = synth_q(8, 2, 11);
    std::vector<long> counts{2, 2}; // 4 voids

    SECTION("pure relocation picks occupied source and void target") {
        Rng rng(1);
        Allocation x = random_feasible(q.n, counts, rng);
        MovePicker picker(x, q.k);
        for (int i = 0; i < 200; ++i) {
            Move mv = picker.propose(x, MoveStrategy{1.0}, rng);
            REQUIRE(mv.kind == Move::Kind::relocate);
            CHECK(x.assign[mv.pos_a] != static_cast<int>(q.k));
            CHECK(x.assign[mv.pos_b] == static_cast<int>(q.k));
        }
        CHECK(picker.relocate_fallbacks == 0);
    }

    SECTION("pure swap picks two occupied positions of different species") {
        Rng rng(2);
        Allocation x = random_feasible(q.n, counts, rng);
        MovePicker picker(x, q.k);
        for (int i = 0; i < 200; ++i) {
            Move mv = picker.propose(x, MoveStrategy{0.0}, rng);
            REQUIRE(mv.kind == Move::Kind::swap_pair);
            CHECK(x.assign[mv.pos_a] != static_cast<int>(q.k));
            CHECK(x.assign[mv.pos_b] != static_cast<int>(q.k));
            CHECK(x.assign[mv.pos_a] != x.assign[mv.pos_b]);
        }
        CHECK(picker.swap_fallbacks == 0);
    }

    SECTION("mixed strategy produces both kinds") {
        Rng rng(3);
        Allocation x = random_feasible(q.n, counts, rng);
        MovePicker picker(x, q.k);
        int reloc = 0, swaps = 0;
        for (int i = 0; i < 400; ++i) {
            Move mv = picker.propose(x, MoveStrategy{0.5}, rng);
            (mv.kind == Move::Kind::relocate ? reloc : swaps)++;
        }
        CHECK(reloc > 100);
        CHECK(swaps > 100);
    }

    SECTION("invalid p_relocate rejected") {
        Rng rng(4);
        Allocation x = random_feasible(q.n, counts, rng);
        MovePicker picker(x, q.k);
        CHECK_THROWS_AS(picker.propose(x, MoveStrategy{1.5}, rng), ConfigError);
        CHECK_THROWS_AS(picker.propose(x, MoveStrategy{-0.1}, rng), ConfigError);
    }
}

TEST_CASE("impossible draws fall back to the other move kind") {
    SECTION("no voids: relocation draw becomes a swap") {
        QTable q = synth_q(8, 2, 12);
        std::vector<long> counts{4, 4};
        Rng rng(5);
        Allocation x = random_feasible(q.n, counts, rng);
        MovePicker picker(x, q.k);
        for (int i = 0; i < 50; ++i) {
            Move mv = picker.propose(x, MoveStrategy{1.0}, rng);
            CHECK(mv.kind == Move::Kind::swap_pair);
        }
        CHECK(picker.relocate_fallbacks == 50);
    }

    SECTION("single species: swap draw becomes a relocation") {
        QTable q = synth_q(8, 1, 13);
        std::vector<long> counts{3};
        Rng rng(6);
        Allocation x = random_feasible(q.n, counts, rng);
        MovePicker picker(x, q.k);
        for (int i = 0; i < 50; ++i) {
            Move mv = picker.propose(x, MoveStrategy{0.0}, rng);
            CHECK(mv.kind == Move::Kind::relocate);
        }
        CHECK(picker.swap_fallbacks == 50);
    }

    SECTION("single species and no voids: no move exists") {
        QTable q = synth_q(4, 1, 14);
        std::vector<long> counts{4};
        Rng rng(7);
        Allocation x = random_feasible(q.n, counts, rng);
        MovePicker picker(x, q.k);
        CHECK_THROWS_AS(picker.propose(x, MoveStrategy{1.0}, rng), NumericError);
        CHECK_THROWS_AS(picker.propose(x, MoveStrategy{0.0}, rng), NumericError);
    }
}

TEST_CASE("picker bookkeeping stays aligned over a long applied walk") {
    QTable q = synth_q(27, 2, 15);
    std::vector<long> counts{5, 7};
    Rng rng(8);
    Allocation x = random_feasible(q.n, counts, rng);
    MovePicker picker(x, q.k);
    for (int i = 0; i < 500; ++i) {
        Move mv = picker.propose(x, MoveStrategy{0.7}, rng);
        apply_move(x, mv, q.k);
        picker.applied(mv);
    }
    auto expect = occupied_scan(x, q.k);
    auto got = picker.occupied();
    std::sort(got.begin(), got.end());
    CHECK(got == expect);
    CHECK(picker.void_count() == x.n() - expect.size());
    CHECK(validate_allocation(x, q.n, counts).ok);
}

TEST_CASE("one-off proposal helper is deterministic") {
    QTable q = synth_q(8, 1, 16);
    std::vector<long> counts{3};
    Rng r1(9), r2(9);
    Allocation x = random_feasible(q.n, counts, r1);
    Allocation y = random_feasible(q.n, counts, r2);
    Move a = propose_move(x, q.k, MoveStrategy{1.0}, r1);
    Move b = propose_move(y, q.k, MoveStrategy{1.0}, r2);
    CHECK(a.kind == b.kind);
    CHECK(a.pos_a == b.pos_a);
    CHECK(a.pos_b == b.pos_b);
}

TEST_CASE("greedy descent is monotone and lands on a local minimum") {
    QTable q = synth_q(8, 1, 42);
    std::vector<long> counts{3};
    GreedyConfig cfg;
    cfg.max_iter = 20000;
    SolveResult res = greedy_solve(q, counts, cfg, 1234);

    REQUIRE(res.solver == "greedy");
    REQUIRE(validate_allocation(res.best_allocation, q.n, counts).ok);
    CHECK(res.best_energy == energy_hard(res.best_allocation, q));
    CHECK(res.accepted <= res.proposed);
    CHECK(res.proposed == cfg.max_iter);

    // the trace of current energies never rises
    for (std::size_t i = 1; i < res.trace.size(); ++i)
        CHECK(res.trace[i].v[1] <= res.trace[i - 1].v[1]);
    // greedy keeps current == best
    for (const auto& row : res.trace) CHECK(row.v[1] == row.v[2]);

    // no single relocation improves the final state
    auto occ = occupied_scan(res.best_allocation, q.k);
    for (std::size_t a : occ)
        for (std::size_t b = 0; b < q.n; ++b) {
            if (res.best_allocation.assign[b] != static_cast<int>(q.k)) continue;
            Move mv{Move::Kind::relocate, a, b};
            CHECK(delta_energy_move(res.best_allocation, occ, q, mv) >= -1e-12);
        }
}

TEST_CASE("greedy is reproducible per seed") {
    QTable q = synth_q(27, 2, 43);
    std::vector<long> counts{4, 6};
    GreedyConfig cfg;
    cfg.max_iter = 3000;
    SolveResult a = greedy_solve(q, counts, cfg, 99);
    SolveResult b = greedy_solve(q, counts, cfg, 99);
    CHECK(a.best_energy == b.best_energy);
    CHECK(a.best_allocation.assign == b.best_allocation.assign);
    CHECK(a.step_of_best == b.step_of_best);
    CHECK(a.accepted == b.accepted);
}

TEST_CASE("starting temperature estimate is positive and deterministic") {
    QTable q = synth_q(8, 2, 44);
    std::vector<long> counts{2, 2};
    Rng rng(10);
    Allocation x = random_feasible(q.n, counts, rng);
    double t1 = estimate_t0(q, x, MoveStrategy{1.0}, 555);
    double t2 = estimate_t0(q, x, MoveStrategy{1.0}, 555);
    CHECK(t1 > 0.0);
    CHECK(t1 == t2);

    // flat landscape: zero variance falls back to T0 = 1
    QTable flat = synth_q(8, 1, 45, 0.0, 0.0);
    Rng rng2(11);
    Allocation y = random_feasible(flat.n, {3}, rng2);
    CHECK(estimate_t0(flat, y, MoveStrategy{1.0}, 556) == 1.0);
}

TEST_CASE("annealing cools on schedule and respects the floor") {
    QTable q = synth_q(8, 2, 46);
    std::vector<long> counts{2, 2};
    SAConfig cfg;
    cfg.max_iter = 20000;
    cfg.sweeps_per_cool = 5; // cool every 40 proposals at n = 8
    SolveResult res = sa_solve(q, counts, cfg, 321);

    // reconstruct the expected schedule endpoint
    Rng rng(321);
    Allocation x0 = random_feasible(q.n, counts, rng);
    double t0 = estimate_t0(q, x0, cfg.strategy, splitmix64(321) + 1);
    double t_min = cfg.t_min_factor * t0;
    double t = t0;
    std::uint64_t cool_every = cfg.sweeps_per_cool * q.n;
    for (std::uint64_t it = cool_every; it <= cfg.max_iter; it += cool_every)
        t = std::max(t * cfg.cool_alpha, t_min);
    CHECK(res.final_temperature == Catch::Approx(t).epsilon(1e-12));
    CHECK(res.final_temperature >= t_min - 1e-15);

    // temperatures in the trace never rise, best never worsens
    for (std::size_t i = 1; i < res.trace.size(); ++i) {
        CHECK(res.trace[i].v[3] <= res.trace[i - 1].v[3] + 1e-15);
        CHECK(res.trace[i].v[2] <= res.trace[i - 1].v[2] + 1e-15);
    }
    for (const auto& row : res.trace) CHECK(row.v[2] <= row.v[1] + 1e-12);
}

TEST_CASE("annealing trajectory is identical whether T0 is supplied or estimated") {
    QTable q = synth_q(8, 2, 47);
    std::vector<long> counts{2, 2};
    SAConfig auto_cfg;
    auto_cfg.max_iter = 5000;
    SolveResult a = sa_solve(q, counts, auto_cfg, 654);

    Rng rng(654);
    Allocation x0 = random_feasible(q.n, counts, rng);
    SAConfig given_cfg = auto_cfg;
    given_cfg.t0 = estimate_t0(q, x0, auto_cfg.strategy, splitmix64(654) + 1);
    SolveResult b = sa_solve(q, counts, given_cfg, 654);

    CHECK(a.best_energy == b.best_energy);
    CHECK(a.best_allocation.assign == b.best_allocation.assign);
    CHECK(a.accepted == b.accepted);
}

TEST_CASE("annealing finds the exhaustive minimum on a small instance") {
    QTable q = synth_q(8, 2, 48);
    std::vector<long> counts{2, 2}; // 420 feasible states
    double ground = exhaustive_min(q, counts);

    SAConfig cfg;
    cfg.max_iter = 30000;
    SolveResult res = sa_solve(q, counts, cfg, 2024);
    REQUIRE(validate_allocation(res.best_allocation, q.n, counts).ok);
    CHECK(res.best_energy == Catch::Approx(ground).margin(1e-9));
    CHECK(res.best_energy == energy_hard(res.best_allocation, q));
}

TEST_CASE("annealing rejects bad configuration") {
    QTable q = synth_q(8, 1, 49);
    SAConfig cfg;
    cfg.cool_alpha = 1.0;
    CHECK_THROWS_AS(sa_solve(q, {3}, cfg, 1), ConfigError);
    cfg = SAConfig{};
    cfg.t0 = -2.0;
    CHECK_THROWS_AS(sa_solve(q, {3}, cfg, 1), ConfigError);
    cfg = SAConfig{};
    cfg.t_min_factor = 0.0;
    CHECK_THROWS_AS(sa_solve(q, {3}, cfg, 1), ConfigError);
}

TEST_CASE("fallback counters surface in the solve result") {
    QTable q = synth_q(8, 2, 50);
    std::vector<long> counts{4, 4}; // no voids
    GreedyConfig cfg;
    cfg.max_iter = 100;
    cfg.strategy.p_relocate = 1.0;
    SolveResult res = greedy_solve(q, counts, cfg, 77);
    CHECK(res.relocate_fallbacks == res.proposed);
    CHECK(res.swap_fallbacks == 0);
}

TEST_CASE("multi-shot runner picks the best shot deterministically") {
    QTable q = synth_q(27, 2, 51);
    std::vector<long> counts{4, 6};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    auto shot = [&](std::uint64_t seed) {
        GreedyConfig cfg;
        cfg.max_iter = 2000;
        return greedy_solve(q, counts, cfg, seed);
    };

    MultiShotResult serial = run_shots(shot, seeds, 1);
    MultiShotResult parallel = run_shots(shot, seeds, 4);
    REQUIRE(serial.shots.size() == seeds.size());

    for (std::size_t i = 0; i < seeds.size(); ++i) {
        CHECK(serial.shots[i].seed == seeds[i]);
        CHECK(serial.shots[i].best_energy == parallel.shots[i].best_energy);
        CHECK(serial.shots[i].best_allocation.assign == parallel.shots[i].best_allocation.assign);
    }
    CHECK(serial.best_index == parallel.best_index);

    double min_e = serial.shots[0].best_energy;
    for (const auto& s : serial.shots) min_e = std::min(min_e, s.best_energy);
    CHECK(serial.best().best_energy == min_e);

    CHECK_THROWS_AS(run_shots(shot, std::vector<std::uint64_t>{}, 1), ConfigError);
}
