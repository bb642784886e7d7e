#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "evoprune/prunespace.hpp"

namespace evoprune {

// One evaluated genome. Both objectives are minimized: f1 = 1 - proxy
// accuracy, f2 = FLOPs (MACs).
struct Individual {
    Genome genome;
    double proxy_accuracy = 0.0;
    std::int64_t flops = 0;
    int generation_born = 0;
    int slot = 0;  // index within its generation's evaluation batch

    double f1() const { return 1.0 - proxy_accuracy; }
    double f2() const { return static_cast<double>(flops); }
};

// Unit-simplex lattice directions for M=2: (i/p, (p-i)/p), i = 0..p.
std::vector<std::array<double, 2>> das_dennis_points(int divisions);

// Deb-style nondominated sorting into fronts of indices. a dominates b iff
// a <= b in both objectives and < in at least one.
std::vector<std::vector<int>> fast_nondominated_sort(
    const std::vector<std::array<double, 2>>& objectives);

// NSGA-III environmental selection: fill by fronts, split the last one by
// reference-point association and niche counts after ideal-point/intercept
// normalization. The union's best-f1 and best-f2 members always survive.
std::vector<int> nsga3_environmental_selection(
    const std::vector<std::array<double, 2>>& objectives, int capacity,
    const std::vector<std::array<double, 2>>& reference_points);

// Dominated area between a front and a reference point (2-D exact sweep).
double hypervolume(const std::vector<std::array<double, 2>>& front,
                   const std::array<double, 2>& reference);

struct EvalOutcome {
    double proxy_accuracy = 0.0;
    std::int64_t flops = 0;
};

// Evaluators get the genome plus a stream derived from (seed, generation,
// slot), so results never depend on scheduling order.
using Evaluator = std::function<EvalOutcome(const Genome&, RngStream)>;

struct SearchConfig {
    int population = 50;
    int mutation_count = 25;   // M
    int crossover_count = 25;  // S
    int iterations = 30;       // T
    int initial_count = 64;
    std::uint64_t seed = 0;
    int das_dennis_divisions = 99;
    double mutation_prob = 0.1;
    int front_cap = 0;  // K; 0 = return the whole front
    int threads = 1;
};

struct EvalRecord {
    int generation = 0;
    Genome genome;
    std::int64_t flops = 0;
    double proxy_accuracy = 0.0;
    double eval_ms = 0.0;  // stays 0 unless timing logging is enabled
};

struct SearchResult {
    std::vector<Individual> front;    // nondominated archive members, FLOPs ascending
    std::vector<EvalRecord> log;      // one record per evaluator call, in order
    std::vector<Individual> archive;  // every evaluated individual
};

// Algorithm: evaluate `initial_count` random genomes, then `iterations`
// generations of M mutants + S crossover offspring (binary tournament on
// front rank), with genome-level memoization across the whole run; offspring
// colliding with any previously seen genome are redrawn so each generation
// contributes exactly M+S fresh evaluations (until the space exhausts).
// Returns front 0 of the all-time archive.
SearchResult run_search(const SpaceSpec& space, const Evaluator& evaluator,
                        const SearchConfig& config, bool log_timings = false);

// Pure random search under the same evaluation budget, for ablations.
SearchResult run_random_search(const SpaceSpec& space, const Evaluator& evaluator,
                               int budget, std::uint64_t seed, int threads = 1,
                               bool log_timings = false);

// Nondominated subset of `all`, sorted by FLOPs ascending, deduplicated to
// strictly increasing FLOPs; capped to at most `cap` members (0 = no cap) by
// FLOPs-stratified thinning.
std::vector<Individual> pareto_front_of(const std::vector<Individual>& all, int cap = 0);

}  // namespace evoprune
