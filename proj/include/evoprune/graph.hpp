#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "evoprune/tensor.hpp"

namespace evoprune {

// Layer vocabulary. conv2d carries {out_channels, kernel, stride, padding,
// groups}; attention carries {head_count, head_dim, prune_axis}; mlp-block
// carries {hidden_dim}; patch-embed carries {embed_dim, patch}; maxpool
// carries {kernel, stride, padding}.
enum class LayerKind {
    conv2d,
    dense,
    batchnorm,
    relu,
    gelu,
    layernorm,
    attention,
    mlp_block,
    add,
    global_pool,
    maxpool,
    classifier,
    patch_embed,
};

std::string kind_name(LayerKind k);
std::optional<LayerKind> kind_from_name(const std::string& name);

// attention.prune_axis values: which internal axis its dependency group
// indexes.
inline constexpr int kPruneAxisHeads = 0;
inline constexpr int kPruneAxisHeadDim = 1;

struct LayerSpec {
    std::string name;
    LayerKind kind;
    std::map<std::string, int> hyperparams;
    std::vector<std::string> inputs;

    int hp(const std::string& key) const;
    int hp_or(const std::string& key, int fallback) const;
};

enum class Axis { out_channels, in_channels };

struct GroupMember {
    std::string layer;
    Axis axis;
};

// A set of layer axes that must keep identical channel counts and identical
// kept-index lists (residual adds tie their producers together).
struct DependencyGroup {
    int id = 0;
    std::vector<GroupMember> members;
    int original_size = 0;
};

struct NetworkGraph {
    std::vector<LayerSpec> layers;  // topologically ordered
    std::vector<DependencyGroup> groups;
    std::vector<int> input_shape;  // [C,H,W] images or [T,D] tokens
    int class_count = 0;

    const LayerSpec* find_layer(const std::string& name) const;
    int layer_index(const std::string& name) const;  // -1 when absent
    const DependencyGroup* find_group(int id) const;

    // Group id that owns the given axis of the given layer, or -1.
    int group_of(const std::string& layer, Axis axis) const;

    // Name of the single output layer (the layer no one consumes).
    std::string output_layer() const;
};

// Named weight payloads per layer: conv/dense/classifier use {kernel, bias?};
// batchnorm uses {gamma, beta, mean, var}; layernorm {gamma, beta}; attention
// {qkv_kernel, qkv_bias?, proj_kernel, proj_bias?}; mlp-block {fc1_kernel,
// fc1_bias?, fc2_kernel, fc2_bias?}; patch-embed {kernel, bias?, cls, pos}.
struct WeightStore {
    std::map<std::string, std::map<std::string, Tensor>> entries;

    bool has(const std::string& layer, const std::string& tensor) const;
    const Tensor& get(const std::string& layer, const std::string& tensor) const;
    const Tensor* get_if(const std::string& layer, const std::string& tensor) const;
    void put(const std::string& layer, const std::string& tensor, Tensor value);
};

// Structural widths of one layer after resolving pruned group sizes.
struct LayerWidths {
    int in = 0;        // input channels/features (0 when not applicable)
    int out = 0;       // output channels/features
    int heads = 0;     // attention only
    int head_dim = 0;  // attention only
    int hidden = 0;    // mlp-block only
};

// Per-sample output shape of every layer plus resolved widths, for a given
// assignment of kept counts to groups (empty map = full width).
struct ShapeInfo {
    std::unordered_map<std::string, std::vector<int>> output_shape;
    std::unordered_map<std::string, LayerWidths> widths;
};

// Diagnostics (empty = valid): type invariants, group coverage/consistency,
// the add-edge sharing rule, and weight-shape agreement.
std::vector<std::string> validate(const NetworkGraph& graph, const WeightStore& weights);

// Full-width weight shapes per layer, including optional bias slots.
std::map<std::string, std::map<std::string, std::vector<int>>> expected_weight_shapes(
    const NetworkGraph& graph);

// Structure-only validation (no weight shape checks).
std::vector<std::string> validate_structure(const NetworkGraph& graph);

ShapeInfo infer_shapes(const NetworkGraph& graph, const std::map<int, int>& group_sizes = {});

// Multiply-accumulate count at the given kept widths (1 MAC = 1 FLOP).
// Counts conv, dense, classifier, attention, mlp and patch-embed products;
// bias adds, activations, normalizations and pooling are excluded.
std::int64_t count_flops(const NetworkGraph& graph, const std::map<int, int>& group_sizes = {});

// Logits [N x class_count] from walking the topological order.
Tensor forward(const NetworkGraph& graph, const WeightStore& weights, const Tensor& batch);

// One layer's output from its already-computed inputs.
Tensor eval_layer(const LayerSpec& layer, const WeightStore& weights,
                  const std::vector<const Tensor*>& inputs);

// Forward pass that also returns every layer's output activation.
std::unordered_map<std::string, Tensor> forward_collect(const NetworkGraph& graph,
                                                        const WeightStore& weights,
                                                        const Tensor& batch);

}  // namespace evoprune
