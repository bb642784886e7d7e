#pragma once

#include <map>
#include <string>
#include <vector>

#include "evoprune/graph.hpp"
#include "evoprune/rng.hpp"

namespace evoprune {

enum class SpaceMode { cnn_channels, vit_head_count, vit_head_dim };

std::string space_mode_name(SpaceMode m);
SpaceMode space_mode_from_name(const std::string& name);

// One integer decision: a kept count for its dependency group, constrained
// to the lattice {lower, lower+step, ..., upper}.
struct Gene {
    int group_id = 0;
    int lower = 1;
    int upper = 1;
    int step = 1;

    int lattice_size() const { return (upper - lower) / step + 1; }
    bool contains(int v) const {
        return v >= lower && v <= upper && (v - lower) % step == 0;
    }
};

struct SpaceSpec {
    std::vector<Gene> genes;
    SpaceMode mode = SpaceMode::cnn_channels;
};

// Integer vector, one entry per gene, each on its gene's lattice.
struct Genome {
    std::vector<int> values;

    bool operator==(const Genome& other) const { return values == other.values; }
    std::string to_string() const;  // comma-separated, gene order
    static Genome parse(const std::string& text);
};

// Kept channel indices per group id, sorted ascending; shared by every
// member of the dependency group.
struct ChannelSelection {
    std::map<int, std::vector<int>> kept;
};

// A decoded subnetwork: shrunken graph (hyperparams and group sizes updated),
// the selection that produced it, sliced weights, and its MAC count.
struct Subnetwork {
    NetworkGraph graph;
    ChannelSelection selection;
    WeightStore weights;
    std::int64_t flops = 0;
};

enum class SelectionStrategy { random, l1norm };

std::string strategy_name(SelectionStrategy s);
SelectionStrategy strategy_from_name(const std::string& name);

// Search space per the graph's dependency groups.
//   cnn-channels:   one gene per group, step 1, lower = max(1, ceil(r*C));
//                   the first conv layer's group gets no gene.
//   vit-head-count: per attention block a head gene on [1, H] step 1, plus a
//                   hidden gene with step original_hidden/16.
//   vit-head-dim:   head-dim gene (step original_head_dim/16) replaces the
//                   head gene; embedding width is never a gene.
SpaceSpec build_space(const NetworkGraph& graph, SpaceMode mode, double min_ratio = 0.1);

Genome random_genome(const SpaceSpec& space, RngStream& rng);

// Resamples each gene uniformly on its lattice with probability p_m.
Genome mutate(const SpaceSpec& space, const Genome& g, RngStream& rng, double p_m);

// Picks each gene from either parent with probability 1/2.
Genome crossover(const Genome& a, const Genome& b, RngStream& rng);

void check_genome(const SpaceSpec& space, const Genome& g);

// Kept indices for one group. random: uniform without replacement.
// l1norm: indices of the kept_count largest l1 norms of the group's primary
// producer kernel slices, ties to the lower index.
std::vector<int> select_channels(const NetworkGraph& graph, const WeightStore& weights,
                                 const DependencyGroup& group, int kept_count,
                                 SelectionStrategy strategy, RngStream& rng);

// Genome -> concrete pruned subnetwork: selections per group, widths shrunk,
// weights sliced on both producer and consumer axes, FLOPs computed.
Subnetwork decode(const NetworkGraph& graph, const WeightStore& weights, const SpaceSpec& space,
                  const Genome& genome, SelectionStrategy strategy, RngStream& rng);

// Kept count per group id implied by a genome (gene-less groups full width).
std::map<int, int> genome_widths(const NetworkGraph& graph, const SpaceSpec& space,
                                 const Genome& genome);

// Kept indices resolved per layer: `in` for the consumer axis, `out` for the
// producer axis (attention/mlp: their internal axis). Empty vector = full
// width kept.
struct ResolvedSlices {
    std::vector<int> in;
    std::vector<int> out;
};
std::map<std::string, ResolvedSlices> selection_flow(const NetworkGraph& graph,
                                                     const ChannelSelection& selection);

}  // namespace evoprune
