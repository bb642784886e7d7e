#include "evoprune/graph.hpp"

#include <algorithm>
#include <set>

#include "evoprune/ops.hpp"

namespace evoprune {

namespace {

const std::map<std::string, LayerKind>& kind_table() {
    static const std::map<std::string, LayerKind> table = {
        {"conv2d", LayerKind::conv2d},        {"dense", LayerKind::dense},
        {"batchnorm", LayerKind::batchnorm},  {"relu", LayerKind::relu},
        {"gelu", LayerKind::gelu},            {"layernorm", LayerKind::layernorm},
        {"attention", LayerKind::attention},  {"mlp-block", LayerKind::mlp_block},
        {"add", LayerKind::add},              {"global-pool", LayerKind::global_pool},
        {"maxpool", LayerKind::maxpool},      {"classifier", LayerKind::classifier},
        {"patch-embed", LayerKind::patch_embed},
    };
    return table;
}

constexpr const char* kInputName = "input";

bool is_passthrough(LayerKind k) {
    return k == LayerKind::relu || k == LayerKind::gelu || k == LayerKind::add ||
           k == LayerKind::maxpool || k == LayerKind::global_pool ||
           k == LayerKind::batchnorm || k == LayerKind::layernorm;
}

// Depthwise convs tie groups to the (possibly pruned) channel width.
int effective_conv_groups(const LayerSpec& layer, int in_width) {
    return layer.hp_or("depthwise", 0) ? in_width : layer.hp_or("groups", 1);
}

}  // namespace

std::string kind_name(LayerKind k) {
    for (const auto& [name, kind] : kind_table())
        if (kind == k) return name;
    return "?";
}

std::optional<LayerKind> kind_from_name(const std::string& name) {
    auto it = kind_table().find(name);
    if (it == kind_table().end()) return std::nullopt;
    return it->second;
}

int LayerSpec::hp(const std::string& key) const {
    auto it = hyperparams.find(key);
    if (it == hyperparams.end())
        throw DimensionError("layer '" + name + "' is missing hyperparam '" + key + "'");
    return it->second;
}

int LayerSpec::hp_or(const std::string& key, int fallback) const {
    auto it = hyperparams.find(key);
    return it == hyperparams.end() ? fallback : it->second;
}

const LayerSpec* NetworkGraph::find_layer(const std::string& name) const {
    for (const auto& l : layers)
        if (l.name == name) return &l;
    return nullptr;
}

int NetworkGraph::layer_index(const std::string& name) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].name == name) return static_cast<int>(i);
    return -1;
}

const DependencyGroup* NetworkGraph::find_group(int id) const {
    for (const auto& g : groups)
        if (g.id == id) return &g;
    return nullptr;
}

int NetworkGraph::group_of(const std::string& layer, Axis axis) const {
    for (const auto& g : groups)
        for (const auto& m : g.members)
            if (m.layer == layer && m.axis == axis) return g.id;
    return -1;
}

std::string NetworkGraph::output_layer() const {
    std::set<std::string> consumed;
    for (const auto& l : layers)
        for (const auto& in : l.inputs) consumed.insert(in);
    for (auto it = layers.rbegin(); it != layers.rend(); ++it)
        if (!consumed.count(it->name)) return it->name;
    return {};
}

bool WeightStore::has(const std::string& layer, const std::string& tensor) const {
    auto it = entries.find(layer);
    return it != entries.end() && it->second.count(tensor) > 0;
}

const Tensor& WeightStore::get(const std::string& layer, const std::string& tensor) const {
    auto it = entries.find(layer);
    if (it != entries.end()) {
        auto jt = it->second.find(tensor);
        if (jt != it->second.end()) return jt->second;
    }
    throw DataError("missing weight '" + tensor + "' for layer '" + layer + "'");
}

const Tensor* WeightStore::get_if(const std::string& layer, const std::string& tensor) const {
    auto it = entries.find(layer);
    if (it == entries.end()) return nullptr;
    auto jt = it->second.find(tensor);
    return jt == it->second.end() ? nullptr : &jt->second;
}

void WeightStore::put(const std::string& layer, const std::string& tensor, Tensor value) {
    entries[layer][tensor] = std::move(value);
}

ShapeInfo infer_shapes(const NetworkGraph& graph, const std::map<int, int>& group_sizes) {
    ShapeInfo info;
    auto group_width = [&](int id, int original) {
        if (id < 0) return original;
        auto it = group_sizes.find(id);
        if (it == group_sizes.end()) return original;
        const DependencyGroup* g = graph.find_group(id);
        if (!g) throw BoundsError("unknown group id " + std::to_string(id));
        if (it->second < 1 || it->second > g->original_size)
            throw BoundsError("kept count " + std::to_string(it->second) + " for group " +
                              std::to_string(id) + " outside [1, " +
                              std::to_string(g->original_size) + "]");
        return it->second;
    };
    auto shape_of = [&](const std::string& name) -> const std::vector<int>& {
        if (name == kInputName) return graph.input_shape;
        auto it = info.output_shape.find(name);
        if (it == info.output_shape.end())
            throw DimensionError("layer input '" + name + "' is not defined before use");
        return it->second;
    };

    for (const auto& layer : graph.layers) {
        if (layer.inputs.empty())
            throw DimensionError("layer '" + layer.name + "' has no inputs");
        const std::vector<int>& in0 = shape_of(layer.inputs[0]);
        LayerWidths w;
        std::vector<int> out;
        switch (layer.kind) {
            case LayerKind::conv2d: {
                if (in0.size() != 3)
                    throw DimensionError("conv '" + layer.name + "' expects [C,H,W] input");
                w.in = group_width(graph.group_of(layer.name, Axis::in_channels), in0[0]);
                if (w.in != in0[0])
                    throw DimensionError("conv '" + layer.name + "' in-group width " +
                                         std::to_string(w.in) + " != producer width " +
                                         std::to_string(in0[0]));
                w.out = group_width(graph.group_of(layer.name, Axis::out_channels),
                                    layer.hp("out_channels"));
                const int k = layer.hp("kernel");
                const int oh =
                    ops::conv_out_extent(in0[1], k, layer.hp("stride"), layer.hp_or("padding", 0));
                const int ow =
                    ops::conv_out_extent(in0[2], k, layer.hp("stride"), layer.hp_or("padding", 0));
                if (oh < 1 || ow < 1)
                    throw DimensionError("conv '" + layer.name + "' output collapses to zero");
                const int groups = effective_conv_groups(layer, w.in);
                if (groups > 1 && (w.in % groups || w.out % groups))
                    throw DimensionError("conv '" + layer.name + "' groups do not divide widths");
                out = {w.out, oh, ow};
                break;
            }
            case LayerKind::dense: {
                w.in = group_width(graph.group_of(layer.name, Axis::in_channels), in0.back());
                w.out = group_width(graph.group_of(layer.name, Axis::out_channels),
                                    layer.hp("out_features"));
                out = in0;
                out.back() = w.out;
                break;
            }
            case LayerKind::batchnorm: {
                if (in0.empty()) throw DimensionError("batchnorm input missing");
                w.in = w.out = in0[0];
                out = in0;
                break;
            }
            case LayerKind::relu:
            case LayerKind::gelu:
            case LayerKind::layernorm: {
                w.in = w.out = in0.back();
                out = in0;
                break;
            }
            case LayerKind::attention: {
                if (in0.size() != 2)
                    throw DimensionError("attention '" + layer.name + "' expects [T,D] input");
                w.heads = layer.hp("head_count");
                w.head_dim = layer.hp("head_dim");
                const int g = graph.group_of(layer.name, Axis::out_channels);
                if (g >= 0) {
                    if (layer.hp_or("prune_axis", kPruneAxisHeads) == kPruneAxisHeads)
                        w.heads = group_width(g, w.heads);
                    else
                        w.head_dim = group_width(g, w.head_dim);
                }
                w.in = w.out = in0[1];
                out = in0;
                break;
            }
            case LayerKind::mlp_block: {
                if (in0.size() != 2)
                    throw DimensionError("mlp-block '" + layer.name + "' expects [T,D] input");
                w.hidden = group_width(graph.group_of(layer.name, Axis::out_channels),
                                       layer.hp("hidden_dim"));
                w.in = w.out = in0[1];
                out = in0;
                break;
            }
            case LayerKind::add: {
                for (std::size_t i = 1; i < layer.inputs.size(); ++i)
                    if (shape_of(layer.inputs[i]) != in0)
                        throw DimensionError("add '" + layer.name +
                                             "' inputs have mismatched shapes");
                w.in = w.out = in0[0];
                out = in0;
                break;
            }
            case LayerKind::global_pool: {
                if (in0.size() != 3)
                    throw DimensionError("global-pool '" + layer.name + "' expects [C,H,W]");
                w.in = w.out = in0[0];
                out = {in0[0]};
                break;
            }
            case LayerKind::maxpool: {
                if (in0.size() != 3)
                    throw DimensionError("maxpool '" + layer.name + "' expects [C,H,W]");
                const int k = layer.hp("kernel");
                const int oh =
                    ops::conv_out_extent(in0[1], k, layer.hp("stride"), layer.hp_or("padding", 0));
                const int ow =
                    ops::conv_out_extent(in0[2], k, layer.hp("stride"), layer.hp_or("padding", 0));
                w.in = w.out = in0[0];
                out = {in0[0], oh, ow};
                break;
            }
            case LayerKind::classifier: {
                w.in = group_width(graph.group_of(layer.name, Axis::in_channels), in0.back());
                w.out = graph.class_count;
                out = {graph.class_count};
                break;
            }
            case LayerKind::patch_embed: {
                if (in0.size() != 3)
                    throw DimensionError("patch-embed '" + layer.name + "' expects [C,H,W]");
                const int p = layer.hp("patch");
                const int d = layer.hp("embed_dim");
                if (in0[1] % p || in0[2] % p)
                    throw DimensionError("patch-embed '" + layer.name +
                                         "': patch does not tile input");
                const int tokens = (in0[1] / p) * (in0[2] / p) + 1;
                w.in = in0[0];
                w.out = d;
                out = {tokens, d};
                break;
            }
        }
        info.widths[layer.name] = w;
        info.output_shape[layer.name] = std::move(out);
    }
    return info;
}

std::int64_t count_flops(const NetworkGraph& graph, const std::map<int, int>& group_sizes) {
    const ShapeInfo info = infer_shapes(graph, group_sizes);
    auto in_shape = [&](const LayerSpec& l) -> const std::vector<int>& {
        return l.inputs[0] == kInputName ? graph.input_shape
                                         : info.output_shape.at(l.inputs[0]);
    };
    std::int64_t total = 0;
    for (const auto& layer : graph.layers) {
        const LayerWidths& w = info.widths.at(layer.name);
        switch (layer.kind) {
            case LayerKind::conv2d: {
                const auto& out = info.output_shape.at(layer.name);
                const int groups = effective_conv_groups(layer, w.in);
                total += static_cast<std::int64_t>(w.out) * (w.in / groups) * layer.hp("kernel") *
                         layer.hp("kernel") * out[1] * out[2];
                break;
            }
            case LayerKind::dense: {
                const auto& in = in_shape(layer);
                const std::int64_t rows = in.size() == 2 ? in[0] : 1;
                total += rows * w.out * w.in;
                break;
            }
            case LayerKind::classifier: {
                total += static_cast<std::int64_t>(w.in) * graph.class_count;
                break;
            }
            case LayerKind::attention: {
                const auto& in = in_shape(layer);
                const std::int64_t t = in[0];
                const std::int64_t d = in[1];
                const std::int64_t m = static_cast<std::int64_t>(w.heads) * w.head_dim;
                total += t * d * 3 * m;            // QKV projection
                total += 2 * w.heads * t * t * w.head_dim;  // scores + weighted sum
                total += t * m * d;                // output projection
                break;
            }
            case LayerKind::mlp_block: {
                const auto& in = in_shape(layer);
                total += 2 * static_cast<std::int64_t>(in[0]) * in[1] * w.hidden;
                break;
            }
            case LayerKind::patch_embed: {
                const auto& out = info.output_shape.at(layer.name);
                const auto& in = in_shape(layer);
                const int p = layer.hp("patch");
                total += static_cast<std::int64_t>(out[1]) * in[0] * p * p * (out[0] - 1);
                break;
            }
            default:
                break;  // normalization, activation, pooling, add: 0 MACs
        }
    }
    return total;
}

namespace {

std::vector<std::string> required_weights(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv2d:
        case LayerKind::dense:
        case LayerKind::classifier:
            return {"kernel"};
        case LayerKind::batchnorm:
            return {"gamma", "beta", "mean", "var"};
        case LayerKind::layernorm:
            return {"gamma", "beta"};
        case LayerKind::attention:
            return {"qkv_kernel", "proj_kernel"};
        case LayerKind::mlp_block:
            return {"fc1_kernel", "fc2_kernel"};
        case LayerKind::patch_embed:
            return {"kernel", "cls", "pos"};
        default:
            return {};
    }
}

// Expected full-width weight shapes for one layer.
std::map<std::string, std::vector<int>> expected_shapes(const NetworkGraph& graph,
                                                        const LayerSpec& layer,
                                                        const ShapeInfo& info,
                                                        const std::vector<int>& in_shape) {
    const LayerWidths& w = info.widths.at(layer.name);
    switch (layer.kind) {
        case LayerKind::conv2d: {
            const int k = layer.hp("kernel");
            const int groups = effective_conv_groups(layer, w.in);
            return {{"kernel", {w.out, w.in / groups, k, k}}, {"bias", {w.out}}};
        }
        case LayerKind::dense:
            return {{"kernel", {w.out, w.in}}, {"bias", {w.out}}};
        case LayerKind::classifier:
            return {{"kernel", {graph.class_count, w.in}}, {"bias", {graph.class_count}}};
        case LayerKind::batchnorm:
            return {{"gamma", {w.out}}, {"beta", {w.out}}, {"mean", {w.out}}, {"var", {w.out}}};
        case LayerKind::layernorm:
            return {{"gamma", {w.out}}, {"beta", {w.out}}};
        case LayerKind::attention: {
            const int m = w.heads * w.head_dim;
            const int d = w.in;
            return {{"qkv_kernel", {3 * m, d}},
                    {"qkv_bias", {3 * m}},
                    {"proj_kernel", {d, m}},
                    {"proj_bias", {d}}};
        }
        case LayerKind::mlp_block: {
            const int d = w.in;
            return {{"fc1_kernel", {w.hidden, d}},
                    {"fc1_bias", {w.hidden}},
                    {"fc2_kernel", {d, w.hidden}},
                    {"fc2_bias", {d}}};
        }
        case LayerKind::patch_embed: {
            const int p = layer.hp("patch");
            const auto& out = info.output_shape.at(layer.name);
            return {{"kernel", {w.out, in_shape[0], p, p}},
                    {"bias", {w.out}},
                    {"cls", {1, w.out}},
                    {"pos", {out[0], w.out}}};
        }
        default:
            return {};
    }
}

// Group id carried by a layer's output channels, following passthrough
// layers back to their producers. Returns -1 for unprunable flows.
int effective_out_group(const NetworkGraph& graph, const std::string& name,
                        std::unordered_map<std::string, int>& memo) {
    if (name == kInputName) return -1;
    auto it = memo.find(name);
    if (it != memo.end()) return it->second;
    const LayerSpec* layer = graph.find_layer(name);
    int result = -1;
    if (layer) {
        const int own = graph.group_of(name, Axis::out_channels);
        // Attention/mlp groups index internal axes, not the output feature
        // dimension, so they never flow downstream.
        const bool internal =
            layer->kind == LayerKind::attention || layer->kind == LayerKind::mlp_block;
        if (own >= 0 && !internal)
            result = own;
        else if (is_passthrough(layer->kind) || internal ||
                 layer->kind == LayerKind::layernorm)
            result = effective_out_group(graph, layer->inputs[0], memo);
    }
    memo[name] = result;
    return result;
}

}  // namespace

std::vector<std::string> validate_structure(const NetworkGraph& graph) {
    std::vector<std::string> diags;
    std::set<std::string> names;
    for (const auto& l : graph.layers) {
        if (l.name.empty() || l.name == kInputName)
            diags.push_back("layer has reserved or empty name '" + l.name + "'");
        if (!names.insert(l.name).second)
            diags.push_back("duplicate layer name '" + l.name + "'");
    }
    // inputs must precede their consumers (this also enforces acyclicity).
    std::set<std::string> seen;
    for (const auto& l : graph.layers) {
        for (const auto& in : l.inputs)
            if (in != kInputName && !seen.count(in))
                diags.push_back("layer '" + l.name + "' consumes '" + in +
                                "' which is not defined before it");
        seen.insert(l.name);
    }
    if (graph.class_count < 1) diags.push_back("class_count must be positive");
    if (graph.input_shape.empty() || graph.input_shape.size() > 3)
        diags.push_back("input_shape must be [C,H,W], [T,D] or [F]");

    int outputs = 0;
    {
        std::set<std::string> consumed;
        for (const auto& l : graph.layers)
            for (const auto& in : l.inputs) consumed.insert(in);
        for (const auto& l : graph.layers)
            if (!consumed.count(l.name)) ++outputs;
    }
    if (outputs != 1)
        diags.push_back("graph must have exactly one output layer, found " +
                        std::to_string(outputs));
    if (!diags.empty()) return diags;

    ShapeInfo info;
    try {
        info = infer_shapes(graph);
    } catch (const Error& e) {
        diags.push_back(e.what());
        return diags;
    }

    // Group membership sanity.
    std::set<int> ids;
    std::set<std::pair<std::string, int>> seen_axes;
    for (const auto& g : graph.groups) {
        if (!ids.insert(g.id).second)
            diags.push_back("duplicate group id " + std::to_string(g.id));
        if (g.original_size < 1)
            diags.push_back("group " + std::to_string(g.id) + " has non-positive size");
        for (const auto& m : g.members) {
            const LayerSpec* layer = graph.find_layer(m.layer);
            if (!layer) {
                diags.push_back("group " + std::to_string(g.id) + " references unknown layer '" +
                                m.layer + "'");
                continue;
            }
            if (!seen_axes.insert({m.layer, static_cast<int>(m.axis)}).second)
                diags.push_back("axis of layer '" + m.layer + "' appears in multiple groups");
            const LayerWidths& w = info.widths.at(m.layer);
            int size = 0;
            if (layer->kind == LayerKind::attention)
                size = layer->hp_or("prune_axis", kPruneAxisHeads) == kPruneAxisHeads ? w.heads
                                                                                      : w.head_dim;
            else if (layer->kind == LayerKind::mlp_block)
                size = w.hidden;
            else
                size = m.axis == Axis::out_channels ? w.out : w.in;
            if (size != g.original_size)
                diags.push_back("group " + std::to_string(g.id) + " size " +
                                std::to_string(g.original_size) + " does not match axis of '" +
                                m.layer + "' (" + std::to_string(size) + ")");
        }
    }

    // Flow consistency: consumers must share their producer's group, and add
    // producers must all carry the same group.
    std::unordered_map<std::string, int> memo;
    for (const auto& l : graph.layers) {
        if (l.kind == LayerKind::conv2d || l.kind == LayerKind::dense ||
            l.kind == LayerKind::classifier) {
            const int prod = effective_out_group(graph, l.inputs[0], memo);
            const int declared = graph.group_of(l.name, Axis::in_channels);
            if (prod != declared)
                diags.push_back("layer '" + l.name + "' in-channel group " +
                                std::to_string(declared) + " does not match producer group " +
                                std::to_string(prod));
        }
        if (l.kind == LayerKind::batchnorm) {
            const int prod = effective_out_group(graph, l.inputs[0], memo);
            const int declared = graph.group_of(l.name, Axis::out_channels);
            if (prod != declared)
                diags.push_back("batchnorm '" + l.name + "' group " + std::to_string(declared) +
                                " does not match producer group " + std::to_string(prod));
        }
        if (l.kind == LayerKind::add) {
            const int g0 = effective_out_group(graph, l.inputs[0], memo);
            for (std::size_t i = 1; i < l.inputs.size(); ++i)
                if (effective_out_group(graph, l.inputs[i], memo) != g0)
                    diags.push_back("add '" + l.name +
                                    "' joins producers from different dependency groups");
        }
    }
    return diags;
}

std::map<std::string, std::map<std::string, std::vector<int>>> expected_weight_shapes(
    const NetworkGraph& graph) {
    const ShapeInfo info = infer_shapes(graph);
    std::map<std::string, std::map<std::string, std::vector<int>>> out;
    for (const auto& layer : graph.layers) {
        const std::vector<int>& in_shape =
            layer.inputs[0] == kInputName ? graph.input_shape
                                          : info.output_shape.at(layer.inputs[0]);
        auto shapes = expected_shapes(graph, layer, info, in_shape);
        if (!shapes.empty()) out[layer.name] = std::move(shapes);
    }
    return out;
}

std::vector<std::string> validate(const NetworkGraph& graph, const WeightStore& weights) {
    std::vector<std::string> diags = validate_structure(graph);
    if (!diags.empty()) return diags;

    const ShapeInfo info = infer_shapes(graph);
    for (const auto& layer : graph.layers) {
        const std::vector<int>& in_shape =
            layer.inputs[0] == kInputName ? graph.input_shape
                                          : info.output_shape.at(layer.inputs[0]);
        const auto expected = expected_shapes(graph, layer, info, in_shape);
        for (const auto& req : required_weights(layer.kind))
            if (!weights.has(layer.name, req))
                diags.push_back("layer '" + layer.name + "' is missing weight '" + req + "'");
        auto it = weights.entries.find(layer.name);
        if (it == weights.entries.end()) continue;
        for (const auto& [tname, tensor] : it->second) {
            auto want = expected.find(tname);
            if (want == expected.end()) continue;
            if (tensor.shape() != want->second) {
                Tensor probe(want->second);
                diags.push_back("layer '" + layer.name + "' weight '" + tname + "' has shape " +
                                tensor.shape_string() + ", expected " + probe.shape_string());
            }
        }
    }
    return diags;
}

namespace {

Tensor patch_embed_forward(const LayerSpec& layer, const WeightStore& weights, const Tensor& x) {
    const int p = layer.hp("patch");
    const Tensor& kernel = weights.get(layer.name, "kernel");
    const Tensor* bias = weights.get_if(layer.name, "bias");
    Tensor feat = ops::conv2d_forward(x, kernel, p, 0, 1, bias);  // [N, D, h, w]
    const int n = feat.dim(0), d = feat.dim(1), grid = feat.dim(2) * feat.dim(3);
    const Tensor& cls = weights.get(layer.name, "cls");
    const Tensor& pos = weights.get(layer.name, "pos");
    const int tokens = grid + 1;
    if (pos.dim(0) != tokens || pos.dim(1) != d)
        throw DimensionError("patch-embed '" + layer.name + "' pos table " + pos.shape_string() +
                             " does not match " + std::to_string(tokens) + " tokens");
    Tensor out({n, tokens, d});
    for (int img = 0; img < n; ++img) {
        for (int j = 0; j < d; ++j)
            out.at({img, 0, j}) = cls[j] + pos[j];
        for (int g = 0; g < grid; ++g)
            for (int j = 0; j < d; ++j)
                out.at({img, g + 1, j}) =
                    feat[(static_cast<std::int64_t>(img) * d + j) * grid + g] +
                    pos[static_cast<std::int64_t>(g + 1) * d + j];
    }
    return out;
}

Tensor classifier_forward(const LayerSpec& layer, const WeightStore& weights, const Tensor& x) {
    Tensor in = x;
    if (x.rank() == 3) {
        // Token input: classify from the cls token.
        const int n = x.dim(0), t = x.dim(1), d = x.dim(2);
        Tensor cls({n, d});
        for (int img = 0; img < n; ++img)
            for (int j = 0; j < d; ++j)
                cls[static_cast<std::int64_t>(img) * d + j] =
                    x[(static_cast<std::int64_t>(img) * t) * d + j];
        in = std::move(cls);
    }
    return ops::dense_forward(in, weights.get(layer.name, "kernel"),
                              weights.get_if(layer.name, "bias"));
}

}  // namespace

Tensor eval_layer(const LayerSpec& layer, const WeightStore& weights,
                  const std::vector<const Tensor*>& inputs) {
    const Tensor& x = *inputs.at(0);
    Tensor y;
    switch (layer.kind) {
        case LayerKind::conv2d:
            y = ops::conv2d_forward(x, weights.get(layer.name, "kernel"),
                                    layer.hp("stride"), layer.hp_or("padding", 0),
                                    effective_conv_groups(layer, x.dim(1)),
                                    weights.get_if(layer.name, "bias"));
            break;
        case LayerKind::dense:
            y = ops::dense_forward(x, weights.get(layer.name, "kernel"),
                                   weights.get_if(layer.name, "bias"));
            break;
        case LayerKind::batchnorm:
            y = ops::batchnorm_inference_forward(
                x, weights.get(layer.name, "gamma"), weights.get(layer.name, "beta"),
                weights.get(layer.name, "mean"), weights.get(layer.name, "var"));
            break;
        case LayerKind::relu:
            y = ops::relu(x);
            break;
        case LayerKind::gelu:
            y = ops::gelu(x);
            break;
        case LayerKind::layernorm:
            y = ops::layernorm_forward(x, weights.get(layer.name, "gamma"),
                                       weights.get(layer.name, "beta"));
            break;
        case LayerKind::attention: {
            int heads = layer.hp("head_count");
            int head_dim = layer.hp("head_dim");
            y = ops::attention_forward(x, weights.get(layer.name, "qkv_kernel"),
                                       weights.get_if(layer.name, "qkv_bias"),
                                       weights.get(layer.name, "proj_kernel"),
                                       weights.get_if(layer.name, "proj_bias"), heads,
                                       head_dim);
            break;
        }
        case LayerKind::mlp_block: {
            Tensor hidden =
                ops::dense_forward(x, weights.get(layer.name, "fc1_kernel"),
                                   weights.get_if(layer.name, "fc1_bias"));
            hidden = ops::gelu(hidden);
            y = ops::dense_forward(hidden, weights.get(layer.name, "fc2_kernel"),
                                   weights.get_if(layer.name, "fc2_bias"));
            break;
        }
        case LayerKind::add: {
            y = x;
            for (std::size_t i = 1; i < inputs.size(); ++i) {
                const Tensor& other = *inputs[i];
                if (!y.same_shape(other))
                    throw DimensionError("add operands " + y.shape_string() + " vs " +
                                         other.shape_string());
                for (std::int64_t j = 0; j < y.numel(); ++j) y[j] += other[j];
            }
            break;
        }
        case LayerKind::global_pool:
            y = ops::global_average_pool(x);
            break;
        case LayerKind::maxpool:
            y = ops::max_pool2d(x, layer.hp("kernel"), layer.hp("stride"),
                                layer.hp_or("padding", 0));
            break;
        case LayerKind::classifier:
            y = classifier_forward(layer, weights, x);
            break;
        case LayerKind::patch_embed:
            y = patch_embed_forward(layer, weights, x);
            break;
    }
    return y;
}

std::unordered_map<std::string, Tensor> forward_collect(const NetworkGraph& graph,
                                                        const WeightStore& weights,
                                                        const Tensor& batch) {
    std::unordered_map<std::string, Tensor> acts;
    for (const auto& layer : graph.layers) {
        std::vector<const Tensor*> inputs;
        for (const auto& in : layer.inputs) {
            if (in == kInputName) {
                inputs.push_back(&batch);
                continue;
            }
            auto it = acts.find(in);
            if (it == acts.end())
                throw DimensionError("layer '" + layer.name + "' consumes undefined '" + in + "'");
            inputs.push_back(&it->second);
        }
        try {
            acts[layer.name] = eval_layer(layer, weights, inputs);
        } catch (const Error& e) {
            throw DimensionError("at layer '" + layer.name + "': " + e.what());
        }
    }
    return acts;
}

Tensor forward(const NetworkGraph& graph, const WeightStore& weights, const Tensor& batch) {
    auto acts = forward_collect(graph, weights, batch);
    return acts.at(graph.output_layer());
}

}  // namespace evoprune
