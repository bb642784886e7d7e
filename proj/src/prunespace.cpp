#include "evoprune/prunespace.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace evoprune {

namespace {

constexpr const char* kInputName = "input";

// Smallest lattice point (multiple of step) >= max(step, ratio * original).
int lattice_lower(int original, int step, double min_ratio) {
    const int target = std::max(1, static_cast<int>(std::ceil(min_ratio * original)));
    const int steps = (target + step - 1) / step;
    return std::min(original, std::max(step, steps * step));
}

bool is_transformer_graph(const NetworkGraph& graph) {
    for (const auto& l : graph.layers)
        if (l.kind == LayerKind::attention || l.kind == LayerKind::mlp_block) return true;
    return false;
}

}  // namespace

std::string space_mode_name(SpaceMode m) {
    switch (m) {
        case SpaceMode::cnn_channels: return "cnn-channels";
        case SpaceMode::vit_head_count: return "vit-head-count";
        case SpaceMode::vit_head_dim: return "vit-head-dim";
    }
    return "?";
}

SpaceMode space_mode_from_name(const std::string& name) {
    if (name == "cnn-channels") return SpaceMode::cnn_channels;
    if (name == "vit-head-count") return SpaceMode::vit_head_count;
    if (name == "vit-head-dim") return SpaceMode::vit_head_dim;
    throw ConfigError("unknown space mode '" + name + "'");
}

std::string strategy_name(SelectionStrategy s) {
    return s == SelectionStrategy::random ? "random" : "l1norm";
}

SelectionStrategy strategy_from_name(const std::string& name) {
    if (name == "random") return SelectionStrategy::random;
    if (name == "l1norm") return SelectionStrategy::l1norm;
    throw ConfigError("unknown selection strategy '" + name + "'");
}

std::string Genome::to_string() const {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(values[i]);
    }
    return s;
}

Genome Genome::parse(const std::string& text) {
    Genome g;
    std::string num;
    for (char c : text + ",") {
        if (c == ',' || c == ';') {
            if (!num.empty()) {
                g.values.push_back(std::stoi(num));
                num.clear();
            }
        } else {
            num += c;
        }
    }
    return g;
}

SpaceSpec build_space(const NetworkGraph& graph, SpaceMode mode, double min_ratio) {
    SpaceSpec space;
    space.mode = mode;
    const bool transformer = is_transformer_graph(graph);

    if (mode == SpaceMode::cnn_channels) {
        if (transformer)
            throw ConfigError("cnn-channels mode does not apply to transformer graphs");
        // The first conv layer stays at full width, unless it owns the only
        // group there is.
        int first_conv_group = -1;
        for (const auto& l : graph.layers)
            if (l.kind == LayerKind::conv2d) {
                first_conv_group = graph.group_of(l.name, Axis::out_channels);
                break;
            }
        if (graph.groups.size() == 1) first_conv_group = -1;
        for (const auto& g : graph.groups) {
            if (g.id == first_conv_group) continue;
            Gene gene;
            gene.group_id = g.id;
            gene.step = 1;
            gene.upper = g.original_size;
            gene.lower = std::max(
                1, std::min(g.original_size,
                            static_cast<int>(std::ceil(min_ratio * g.original_size))));
            space.genes.push_back(gene);
        }
    } else {
        if (!transformer)
            throw ConfigError(space_mode_name(mode) + " mode requires a transformer graph");
        for (const auto& l : graph.layers) {
            if (l.kind == LayerKind::attention) {
                const int gid = graph.group_of(l.name, Axis::out_channels);
                if (gid < 0)
                    throw ConfigError("attention layer '" + l.name + "' has no dependency group");
                const int axis = l.hp_or("prune_axis", kPruneAxisHeads);
                Gene gene;
                gene.group_id = gid;
                if (mode == SpaceMode::vit_head_count) {
                    if (axis != kPruneAxisHeads)
                        throw ConfigError("graph declares head-dim pruning for '" + l.name +
                                          "', rebuild it for head-count mode");
                    gene.lower = 1;
                    gene.upper = l.hp("head_count");
                    gene.step = 1;
                } else {
                    if (axis != kPruneAxisHeadDim)
                        throw ConfigError("graph declares head-count pruning for '" + l.name +
                                          "', rebuild it for head-dim mode");
                    const int dh = l.hp("head_dim");
                    gene.upper = dh;
                    gene.step = dh % 16 == 0 ? dh / 16 : 1;
                    gene.lower = lattice_lower(dh, gene.step, min_ratio);
                }
                space.genes.push_back(gene);
            } else if (l.kind == LayerKind::mlp_block) {
                const int gid = graph.group_of(l.name, Axis::out_channels);
                if (gid < 0)
                    throw ConfigError("mlp block '" + l.name + "' has no dependency group");
                const int hidden = l.hp("hidden_dim");
                Gene gene;
                gene.group_id = gid;
                gene.upper = hidden;
                gene.step = hidden % 16 == 0 ? hidden / 16 : 1;
                gene.lower = lattice_lower(hidden, gene.step, min_ratio);
                space.genes.push_back(gene);
            }
        }
    }
    if (space.genes.empty()) throw ConfigError("graph has no prunable groups");
    return space;
}

Genome random_genome(const SpaceSpec& space, RngStream& rng) {
    Genome g;
    g.values.reserve(space.genes.size());
    for (const auto& gene : space.genes)
        g.values.push_back(gene.lower +
                           gene.step * static_cast<int>(rng.next_below(
                                           static_cast<std::uint64_t>(gene.lattice_size()))));
    return g;
}

Genome mutate(const SpaceSpec& space, const Genome& g, RngStream& rng, double p_m) {
    check_genome(space, g);
    Genome out = g;
    for (std::size_t i = 0; i < space.genes.size(); ++i) {
        if (rng.next_double() < p_m) {
            const Gene& gene = space.genes[i];
            out.values[i] = gene.lower +
                            gene.step * static_cast<int>(rng.next_below(
                                            static_cast<std::uint64_t>(gene.lattice_size())));
        }
    }
    return out;
}

Genome crossover(const Genome& a, const Genome& b, RngStream& rng) {
    if (a.values.size() != b.values.size())
        throw ConfigError("crossover parents come from different spaces");
    Genome out;
    out.values.resize(a.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i)
        out.values[i] = rng.next_below(2) == 0 ? a.values[i] : b.values[i];
    return out;
}

void check_genome(const SpaceSpec& space, const Genome& g) {
    if (g.values.size() != space.genes.size())
        throw BoundsError("genome has " + std::to_string(g.values.size()) + " genes, space has " +
                          std::to_string(space.genes.size()));
    for (std::size_t i = 0; i < space.genes.size(); ++i)
        if (!space.genes[i].contains(g.values[i]))
            throw BoundsError("gene " + std::to_string(i) + " value " +
                              std::to_string(g.values[i]) + " is off the lattice");
}

namespace {

// Per-slice l1 norms along the group's prunable axis of its primary
// producer's kernel.
std::vector<double> group_l1_norms(const NetworkGraph& graph, const WeightStore& weights,
                                   const DependencyGroup& group) {
    const int n = group.original_size;
    std::vector<double> norms(static_cast<std::size_t>(n), 0.0);
    for (const auto& m : group.members) {
        if (m.axis != Axis::out_channels) continue;
        const LayerSpec* layer = graph.find_layer(m.layer);
        if (!layer) continue;
        if (layer->kind == LayerKind::conv2d || layer->kind == LayerKind::dense) {
            const Tensor& k = weights.get(m.layer, "kernel");
            const std::int64_t per = k.numel() / k.dim(0);
            if (k.dim(0) != n) continue;  // depthwise ties share the group
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < per; ++j) acc += std::abs(k[i * per + j]);
                norms[static_cast<std::size_t>(i)] += acc;
            }
            return norms;
        }
        if (layer->kind == LayerKind::attention) {
            const Tensor& qkv = weights.get(m.layer, "qkv_kernel");
            const int heads = layer->hp("head_count");
            const int dh = layer->hp("head_dim");
            const int d = qkv.dim(1);
            const bool by_heads = layer->hp_or("prune_axis", kPruneAxisHeads) == kPruneAxisHeads;
            for (int s = 0; s < 3; ++s)
                for (int h = 0; h < heads; ++h)
                    for (int j = 0; j < dh; ++j) {
                        const std::int64_t row = (static_cast<std::int64_t>(s) * heads + h) * dh + j;
                        double acc = 0.0;
                        for (int col = 0; col < d; ++col) acc += std::abs(qkv[row * d + col]);
                        norms[static_cast<std::size_t>(by_heads ? h : j)] += acc;
                    }
            return norms;
        }
        if (layer->kind == LayerKind::mlp_block) {
            const Tensor& fc1 = weights.get(m.layer, "fc1_kernel");
            const int d = fc1.dim(1);
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int col = 0; col < d; ++col) acc += std::abs(fc1[i * d + col]);
                norms[static_cast<std::size_t>(i)] += acc;
            }
            return norms;
        }
    }
    return norms;
}

}  // namespace

std::vector<int> select_channels(const NetworkGraph& graph, const WeightStore& weights,
                                 const DependencyGroup& group, int kept_count,
                                 SelectionStrategy strategy, RngStream& rng) {
    if (kept_count < 1 || kept_count > group.original_size)
        throw BoundsError("kept count " + std::to_string(kept_count) + " outside [1, " +
                          std::to_string(group.original_size) + "] for group " +
                          std::to_string(group.id));
    if (strategy == SelectionStrategy::random)
        return rng.sample_without_replacement(group.original_size, kept_count);

    const std::vector<double> norms = group_l1_norms(graph, weights, group);
    std::vector<int> order(norms.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (norms[static_cast<std::size_t>(a)] != norms[static_cast<std::size_t>(b)])
            return norms[static_cast<std::size_t>(a)] > norms[static_cast<std::size_t>(b)];
        return a < b;
    });
    order.resize(static_cast<std::size_t>(kept_count));
    std::sort(order.begin(), order.end());
    return order;
}

std::map<int, int> genome_widths(const NetworkGraph& graph, const SpaceSpec& space,
                                 const Genome& genome) {
    (void)graph;
    std::map<int, int> widths;
    for (std::size_t i = 0; i < space.genes.size(); ++i)
        widths[space.genes[i].group_id] = genome.values[i];
    return widths;
}

namespace {

std::vector<int> identity_indices(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
    return v;
}

Tensor slice_rows(const Tensor& t, const std::vector<int>& rows) {
    const std::int64_t per = t.numel() / t.dim(0);
    std::vector<int> shape = t.shape();
    shape[0] = static_cast<int>(rows.size());
    Tensor out(shape);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(t.data() + rows[i] * per, t.data() + (rows[i] + 1) * per,
                  out.data() + static_cast<std::int64_t>(i) * per);
    return out;
}

Tensor slice_cols(const Tensor& t, const std::vector<int>& cols) {
    const int r = t.dim(0), c = t.dim(1);
    Tensor out({r, static_cast<int>(cols.size())});
    for (int i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out[static_cast<std::int64_t>(i) * static_cast<std::int64_t>(cols.size()) +
                static_cast<std::int64_t>(j)] = t[static_cast<std::int64_t>(i) * c + cols[j]];
    return out;
}

// dim-1 slice of a rank-4 conv kernel.
Tensor slice_kernel_in(const Tensor& k, const std::vector<int>& in_idx) {
    const int o = k.dim(0), i = k.dim(1), kk = k.dim(2) * k.dim(3);
    Tensor out({o, static_cast<int>(in_idx.size()), k.dim(2), k.dim(3)});
    for (int oc = 0; oc < o; ++oc)
        for (std::size_t j = 0; j < in_idx.size(); ++j)
            std::copy(k.data() + (static_cast<std::int64_t>(oc) * i + in_idx[j]) * kk,
                      k.data() + (static_cast<std::int64_t>(oc) * i + in_idx[j] + 1) * kk,
                      out.data() +
                          (static_cast<std::int64_t>(oc) * static_cast<std::int64_t>(
                                                               in_idx.size()) +
                           static_cast<std::int64_t>(j)) *
                              kk);
    return out;
}

// QKV rows for the kept heads (or kept per-head dims), section-major.
std::vector<int> qkv_rows(int heads, int head_dim, const std::vector<int>& sel, bool by_heads) {
    std::vector<int> rows;
    for (int s = 0; s < 3; ++s) {
        if (by_heads) {
            for (int h : sel)
                for (int j = 0; j < head_dim; ++j) rows.push_back((s * heads + h) * head_dim + j);
        } else {
            for (int h = 0; h < heads; ++h)
                for (int j : sel) rows.push_back((s * heads + h) * head_dim + j);
        }
    }
    return rows;
}

std::vector<int> proj_cols(int heads, int head_dim, const std::vector<int>& sel, bool by_heads) {
    std::vector<int> cols;
    if (by_heads) {
        for (int h : sel)
            for (int j = 0; j < head_dim; ++j) cols.push_back(h * head_dim + j);
    } else {
        for (int h = 0; h < heads; ++h)
            for (int j : sel) cols.push_back(h * head_dim + j);
    }
    return cols;
}

}  // namespace

std::map<std::string, ResolvedSlices> selection_flow(const NetworkGraph& graph,
                                                     const ChannelSelection& selection) {
    // Kept indices carried by each layer's output, following passthroughs.
    std::unordered_map<std::string, const std::vector<int>*> flow;
    auto eff_sel = [&](const std::string& name, auto&& self) -> const std::vector<int>* {
        if (name == kInputName) return nullptr;
        auto it = flow.find(name);
        if (it != flow.end()) return it->second;
        const LayerSpec* layer = graph.find_layer(name);
        const std::vector<int>* result = nullptr;
        const bool internal =
            layer->kind == LayerKind::attention || layer->kind == LayerKind::mlp_block;
        const int own = graph.group_of(name, Axis::out_channels);
        if (own >= 0 && !internal) {
            auto st = selection.kept.find(own);
            result = st == selection.kept.end() ? nullptr : &st->second;
        } else if (!layer->inputs.empty() &&
                   (internal || layer->kind == LayerKind::relu ||
                    layer->kind == LayerKind::gelu || layer->kind == LayerKind::add ||
                    layer->kind == LayerKind::maxpool || layer->kind == LayerKind::batchnorm ||
                    layer->kind == LayerKind::layernorm ||
                    layer->kind == LayerKind::global_pool)) {
            result = self(layer->inputs[0], self);
        }
        flow[name] = result;
        return result;
    };

    std::map<std::string, ResolvedSlices> out;
    for (const auto& layer : graph.layers) {
        ResolvedSlices s;
        const int own = graph.group_of(layer.name, Axis::out_channels);
        if (own >= 0) {
            auto st = selection.kept.find(own);
            if (st != selection.kept.end()) s.out = st->second;
        }
        if (const std::vector<int>* in = eff_sel(layer.inputs[0], eff_sel)) s.in = *in;
        out[layer.name] = std::move(s);
    }
    return out;
}

Subnetwork decode(const NetworkGraph& graph, const WeightStore& weights, const SpaceSpec& space,
                  const Genome& genome, SelectionStrategy strategy, RngStream& rng) {
    check_genome(space, genome);

    Subnetwork sub;
    sub.flops = count_flops(graph, genome_widths(graph, space, genome));

    // Selections per gene, in gene order.
    for (std::size_t i = 0; i < space.genes.size(); ++i) {
        const DependencyGroup* grp = graph.find_group(space.genes[i].group_id);
        sub.selection.kept[grp->id] =
            select_channels(graph, weights, *grp, genome.values[i], strategy, rng);
    }

    const auto flow = selection_flow(graph, sub.selection);
    sub.graph = graph;
    for (auto& layer : sub.graph.layers) {
        const ResolvedSlices& slices = flow.at(layer.name);
        const std::vector<int>* out_sel_p = slices.out.empty() ? nullptr : &slices.out;
        const std::vector<int>* in_sel_p = slices.in.empty() ? nullptr : &slices.in;

        switch (layer.kind) {
            case LayerKind::conv2d: {
                const Tensor& kernel = weights.get(layer.name, "kernel");
                Tensor k = kernel;
                if (layer.hp_or("depthwise", 0)) {
                    if (in_sel_p) k = slice_rows(k, *in_sel_p);
                } else {
                    if (out_sel_p) k = slice_rows(k, *out_sel_p);
                    if (in_sel_p) k = slice_kernel_in(k, *in_sel_p);
                }
                layer.hyperparams["out_channels"] = k.dim(0);
                sub.weights.put(layer.name, "kernel", std::move(k));
                if (const Tensor* bias = weights.get_if(layer.name, "bias")) {
                    Tensor b = *bias;
                    const std::vector<int>* sel =
                        layer.hp_or("depthwise", 0) ? in_sel_p : out_sel_p;
                    if (sel) b = slice_rows(b, *sel);
                    sub.weights.put(layer.name, "bias", std::move(b));
                }
                break;
            }
            case LayerKind::dense:
            case LayerKind::classifier: {
                Tensor k = weights.get(layer.name, "kernel");
                if (layer.kind == LayerKind::dense && out_sel_p) k = slice_rows(k, *out_sel_p);
                if (in_sel_p) k = slice_cols(k, *in_sel_p);
                if (layer.kind == LayerKind::dense) layer.hyperparams["out_features"] = k.dim(0);
                sub.weights.put(layer.name, "kernel", std::move(k));
                if (const Tensor* bias = weights.get_if(layer.name, "bias")) {
                    Tensor b = *bias;
                    if (layer.kind == LayerKind::dense && out_sel_p) b = slice_rows(b, *out_sel_p);
                    sub.weights.put(layer.name, "bias", std::move(b));
                }
                break;
            }
            case LayerKind::batchnorm: {
                const std::vector<int>* sel = in_sel_p;
                for (const char* name : {"gamma", "beta", "mean", "var"}) {
                    Tensor t = weights.get(layer.name, name);
                    if (sel) t = slice_rows(t, *sel);
                    sub.weights.put(layer.name, name, std::move(t));
                }
                break;
            }
            case LayerKind::layernorm: {
                sub.weights.put(layer.name, "gamma", weights.get(layer.name, "gamma"));
                sub.weights.put(layer.name, "beta", weights.get(layer.name, "beta"));
                break;
            }
            case LayerKind::attention: {
                const int heads = layer.hp("head_count");
                const int dh = layer.hp("head_dim");
                const bool by_heads =
                    layer.hp_or("prune_axis", kPruneAxisHeads) == kPruneAxisHeads;
                std::vector<int> sel =
                    out_sel_p ? *out_sel_p : identity_indices(by_heads ? heads : dh);
                const auto rows = qkv_rows(heads, dh, sel, by_heads);
                const auto cols = proj_cols(heads, dh, sel, by_heads);
                sub.weights.put(layer.name, "qkv_kernel",
                                slice_rows(weights.get(layer.name, "qkv_kernel"), rows));
                if (const Tensor* b = weights.get_if(layer.name, "qkv_bias"))
                    sub.weights.put(layer.name, "qkv_bias", slice_rows(*b, rows));
                sub.weights.put(layer.name, "proj_kernel",
                                slice_cols(weights.get(layer.name, "proj_kernel"), cols));
                if (const Tensor* b = weights.get_if(layer.name, "proj_bias"))
                    sub.weights.put(layer.name, "proj_bias", *b);
                if (by_heads)
                    layer.hyperparams["head_count"] = static_cast<int>(sel.size());
                else
                    layer.hyperparams["head_dim"] = static_cast<int>(sel.size());
                break;
            }
            case LayerKind::mlp_block: {
                std::vector<int> sel =
                    out_sel_p ? *out_sel_p : identity_indices(layer.hp("hidden_dim"));
                sub.weights.put(layer.name, "fc1_kernel",
                                slice_rows(weights.get(layer.name, "fc1_kernel"), sel));
                if (const Tensor* b = weights.get_if(layer.name, "fc1_bias"))
                    sub.weights.put(layer.name, "fc1_bias", slice_rows(*b, sel));
                sub.weights.put(layer.name, "fc2_kernel",
                                slice_cols(weights.get(layer.name, "fc2_kernel"), sel));
                if (const Tensor* b = weights.get_if(layer.name, "fc2_bias"))
                    sub.weights.put(layer.name, "fc2_bias", *b);
                layer.hyperparams["hidden_dim"] = static_cast<int>(sel.size());
                break;
            }
            case LayerKind::patch_embed: {
                auto it = weights.entries.find(layer.name);
                if (it != weights.entries.end())
                    for (const auto& [name, t] : it->second)
                        sub.weights.put(layer.name, name, t);
                break;
            }
            default:
                break;
        }
    }

    // The subnetwork's groups shrink to the kept counts so that it is a
    // valid stand-alone graph.
    for (auto& grp : sub.graph.groups) {
        auto it = sub.selection.kept.find(grp.id);
        if (it != sub.selection.kept.end())
            grp.original_size = static_cast<int>(it->second.size());
    }
    return sub;
}

}  // namespace evoprune
