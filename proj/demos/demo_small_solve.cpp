// Rock salt on a 2x2x2 grid, solved three ways. The exhaustive oracle gives
// the exact minimum; greedy and simulated annealing are compared against it.

#include <cstdio>

#include <cspalloc/cspalloc.hpp>

using namespace cspalloc;

int main() {
    SpeciesSet species;
    species.labels = {"Na", "Cl"};
    species.charges = {1.0, -1.0};
    species.counts = {4, 4};

    PositionSet positions = build_grid(GridSpec{2});
    UnitCell cell = UnitCell::cubic(5.64);
    ForceField ff = ForceField::coulomb_only(species.labels, species.charges);
    QTable q = build_q(positions, cell, species, ff);

    std::vector<long> counts(species.counts.begin(), species.counts.end());
    std::printf("instance: %zu positions, %zu species, %.0f feasible allocations\n",
                q.n, q.k, count_feasible(q.n, counts).get_d());

    OracleResult oracle = brute_force_min(q, counts, {});
    std::printf("oracle    %12.6f eV  (%llu states visited)\n", oracle.min_energy,
                (unsigned long long)oracle.visited);

    GreedyConfig gcfg;
    gcfg.max_iter = 5000;
    SolveResult greedy = greedy_solve(q, counts, gcfg, 1);
    std::printf("greedy    %12.6f eV  (gap %.4f)\n", greedy.best_energy,
                rog(oracle.min_energy, greedy.best_energy));

    SAConfig scfg;
    scfg.max_iter = 20000;
    SolveResult sa = sa_solve(q, counts, scfg, 1);
    std::printf("annealing %12.6f eV  (gap %.4f)\n", sa.best_energy,
                rog(oracle.min_energy, sa.best_energy));
    return 0;
}
