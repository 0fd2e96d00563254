// Trains the neural allocation solver on a small synthetic instance and
// prints the training trajectory next to the exhaustive minimum.

#include <cstdio>

#include <cspalloc/cspalloc.hpp>

using namespace cspalloc;

int main() {
    const std::size_t n = 8;
    const std::size_t k = 2;
    QTable q = synth_q(n, k, 42);
    std::vector<long> counts = {3, 2};

    OracleResult oracle = brute_force_min(q, counts, {});
    std::printf("exhaustive minimum: %.6f\n\n", oracle.min_energy);

    CompGraph g = complete_graph(n);
    attach_edge_features(g, q);

    GntConfig cfg;
    cfg.d0 = 8;
    cfg.dh = 8;
    cfg.epochs = 600;
    cfg.trace_points = 12;

    GntResult r = gnt_train(q, g, counts, cfg, 7);
    std::printf("%8s %12s %12s\n", "epoch", "soft", "best");
    for (const auto& row : r.sol.trace)
        std::printf("%8.0f %12.6f %12.6f\n", row.v[0], row.v[1], row.v[2]);

    std::printf("\nfinal: %.6f after %zu epochs (gap %.4f)\n", r.sol.best_energy,
                (std::size_t)r.sol.step_of_best, rog(oracle.min_energy, r.sol.best_energy));
    return 0;
}
