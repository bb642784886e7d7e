#include "evoprune/models.hpp"

#include <cmath>
#include <functional>
#include <map>

#include "evoprune/errors.hpp"
#include "evoprune/rng.hpp"

namespace evoprune::models {

namespace {

// Incremental graph assembly: layers are appended in topological order and
// groups accumulate members as producers/consumers appear.
struct Builder {
    NetworkGraph g;
    int next_group = 0;

    std::string add(std::string name, LayerKind kind, std::map<std::string, int> hp,
                    std::vector<std::string> inputs) {
        LayerSpec l;
        l.name = std::move(name);
        l.kind = kind;
        l.hyperparams = std::move(hp);
        l.inputs = std::move(inputs);
        g.layers.push_back(std::move(l));
        return g.layers.back().name;
    }

    int new_group(int size) {
        g.groups.push_back({next_group, {}, size});
        return next_group++;
    }

    void member(int group, const std::string& layer, Axis axis) {
        for (auto& grp : g.groups)
            if (grp.id == group) {
                grp.members.push_back({layer, axis});
                return;
            }
        throw ConfigError("unknown group id in model builder");
    }
};

// conv + batchnorm (+ relu). Registers the conv's out axis and the bn in
// `out_group`, and the conv's in axis in `in_group` when that group exists.
std::string conv_bn(Builder& b, const std::string& name, const std::string& input, int out_c,
                    int kernel, int stride, int padding, int in_group, int out_group,
                    bool with_relu, bool depthwise = false) {
    std::map<std::string, int> hp = {{"out_channels", out_c},
                                     {"kernel", kernel},
                                     {"stride", stride},
                                     {"padding", padding}};
    if (depthwise) hp["depthwise"] = 1;
    b.add(name, LayerKind::conv2d, std::move(hp), {input});
    if (in_group >= 0) b.member(in_group, name, Axis::in_channels);
    if (depthwise) b.member(in_group, name, Axis::out_channels);
    if (!depthwise && out_group >= 0) b.member(out_group, name, Axis::out_channels);
    const int bn_group = depthwise ? in_group : out_group;
    b.add(name + ".bn", LayerKind::batchnorm, {}, {name});
    if (bn_group >= 0) b.member(bn_group, name + ".bn", Axis::out_channels);
    if (!with_relu) return name + ".bn";
    b.add(name + ".relu", LayerKind::relu, {}, {name + ".bn"});
    return name + ".relu";
}

}  // namespace

NetworkGraph resnet50() {
    Builder b;
    b.g.input_shape = {3, 224, 224};
    b.g.class_count = 1000;

    const int g_stem = b.new_group(64);
    std::string top = conv_bn(b, "conv1", "input", 64, 7, 2, 3, -1, g_stem, true);
    b.add("maxpool", LayerKind::maxpool, {{"kernel", 3}, {"stride", 2}, {"padding", 1}}, {top});
    top = "maxpool";

    const int block_counts[4] = {3, 4, 6, 3};
    const int mid_widths[4] = {64, 128, 256, 512};
    int in_group = g_stem;
    for (int stage = 0; stage < 4; ++stage) {
        const int mid = mid_widths[stage];
        const int out_w = mid * 4;
        const int g_res = b.new_group(out_w);
        for (int block = 0; block < block_counts[stage]; ++block) {
            const std::string prefix =
                "s" + std::to_string(stage + 1) + ".b" + std::to_string(block);
            const int stride = (block == 0 && stage > 0) ? 2 : 1;
            const std::string shortcut_in = top;

            const int g1 = b.new_group(mid);
            std::string x = conv_bn(b, prefix + ".conv1", top, mid, 1, 1, 0, in_group, g1, true);
            const int g2 = b.new_group(mid);
            x = conv_bn(b, prefix + ".conv2", x, mid, 3, stride, 1, g1, g2, true);
            x = conv_bn(b, prefix + ".conv3", x, out_w, 1, 1, 0, g2, g_res, false);

            std::string shortcut = shortcut_in;
            if (block == 0)
                shortcut = conv_bn(b, prefix + ".down", shortcut_in, out_w, 1, stride, 0, in_group,
                                   g_res, false);
            b.add(prefix + ".add", LayerKind::add, {}, {x, shortcut});
            b.add(prefix + ".relu", LayerKind::relu, {}, {prefix + ".add"});
            top = prefix + ".relu";
            in_group = g_res;
        }
    }

    b.add("pool", LayerKind::global_pool, {}, {top});
    b.add("fc", LayerKind::classifier, {}, {"pool"});
    b.member(in_group, "fc", Axis::in_channels);
    return b.g;
}

NetworkGraph mobilenet_v1() {
    Builder b;
    b.g.input_shape = {3, 224, 224};
    b.g.class_count = 1000;

    int group = b.new_group(32);
    std::string top = conv_bn(b, "conv1", "input", 32, 3, 2, 1, -1, group, true);

    const std::pair<int, int> blocks[13] = {
        // {out channels, stride of the depthwise conv}
        {64, 1},  {128, 2}, {128, 1}, {256, 2},  {256, 1},  {512, 2}, {512, 1},
        {512, 1}, {512, 1}, {512, 1}, {512, 1},  {1024, 2}, {1024, 1},
    };
    int width = 32;
    for (int i = 0; i < 13; ++i) {
        const std::string dw = "dw" + std::to_string(i + 1);
        const std::string pw = "pw" + std::to_string(i + 1);
        top = conv_bn(b, dw, top, width, 3, blocks[i].second, 1, group, -1, true, true);
        const int g_out = b.new_group(blocks[i].first);
        top = conv_bn(b, pw, top, blocks[i].first, 1, 1, 0, group, g_out, true);
        group = g_out;
        width = blocks[i].first;
    }

    b.add("pool", LayerKind::global_pool, {}, {top});
    b.add("fc", LayerKind::classifier, {}, {"pool"});
    b.member(group, "fc", Axis::in_channels);
    return b.g;
}

namespace {

NetworkGraph transformer_stack(std::vector<int> input_shape, bool with_patch_embed, int patch,
                               int dim, int heads, int head_dim, int hidden, int blocks,
                               int classes, bool head_dim_axis) {
    Builder b;
    b.g.input_shape = std::move(input_shape);
    b.g.class_count = classes;

    std::string top = "input";
    if (with_patch_embed) {
        b.add("embed", LayerKind::patch_embed, {{"embed_dim", dim}, {"patch", patch}}, {"input"});
        top = "embed";
    }
    for (int i = 0; i < blocks; ++i) {
        const std::string p = "blk" + std::to_string(i);
        b.add(p + ".ln1", LayerKind::layernorm, {}, {top});
        const int g_attn = b.new_group(head_dim_axis ? head_dim : heads);
        b.add(p + ".attn", LayerKind::attention,
              {{"head_count", heads},
               {"head_dim", head_dim},
               {"prune_axis", head_dim_axis ? kPruneAxisHeadDim : kPruneAxisHeads}},
              {p + ".ln1"});
        b.member(g_attn, p + ".attn", Axis::out_channels);
        b.add(p + ".add1", LayerKind::add, {}, {p + ".attn", top});
        b.add(p + ".ln2", LayerKind::layernorm, {}, {p + ".add1"});
        const int g_mlp = b.new_group(hidden);
        b.add(p + ".mlp", LayerKind::mlp_block, {{"hidden_dim", hidden}}, {p + ".ln2"});
        b.member(g_mlp, p + ".mlp", Axis::out_channels);
        b.add(p + ".add2", LayerKind::add, {}, {p + ".mlp", p + ".add1"});
        top = p + ".add2";
    }
    b.add("ln", LayerKind::layernorm, {}, {top});
    b.add("head", LayerKind::classifier, {}, {"ln"});
    return b.g;
}

}  // namespace

NetworkGraph deit_base(bool head_dim_axis) {
    return transformer_stack({3, 224, 224}, true, 16, 768, 12, 64, 3072, 12, 1000, head_dim_axis);
}

NetworkGraph toy_cnn(const ToyCnnParams& p) {
    if (p.channels.size() != 4 || p.strides.size() != 4)
        throw ConfigError("toy_cnn expects 4 conv blocks");
    if (p.residual_block && (p.channels[1] != p.channels[2] || p.strides[2] != 1))
        throw ConfigError("toy_cnn residual block needs matching widths and stride 1");

    Builder b;
    b.g.input_shape = {p.in_channels, p.input_hw, p.input_hw};
    b.g.class_count = p.classes;

    int in_group = -1;
    std::string top = "input";
    for (int i = 0; i < 4; ++i) {
        const std::string name = "conv" + std::to_string(i + 1);
        if (p.residual_block && i == 2) {
            // conv3 keeps conv2's group on both axes; a residual add joins them.
            const std::string shortcut = top;
            std::string x = conv_bn(b, name, top, p.channels[2], 3, 1, 1, in_group, in_group,
                                    false);
            b.add(name + ".radd", LayerKind::add, {}, {x, shortcut});
            b.add(name + ".relu2", LayerKind::relu, {}, {name + ".radd"});
            top = name + ".relu2";
            continue;
        }
        const int g = b.new_group(p.channels[static_cast<std::size_t>(i)]);
        top = conv_bn(b, name, top, p.channels[static_cast<std::size_t>(i)], 3,
                      p.strides[static_cast<std::size_t>(i)], 1, in_group, g, true);
        in_group = g;
    }
    b.add("pool", LayerKind::global_pool, {}, {top});
    b.add("fc", LayerKind::classifier, {}, {"pool"});
    b.member(in_group, "fc", Axis::in_channels);
    return b.g;
}

NetworkGraph toy_transformer(const ToyTransformerParams& p) {
    return transformer_stack({p.tokens, p.dim}, false, 0, p.dim, p.heads, p.head_dim, p.hidden,
                             p.blocks, p.classes, p.head_dim_axis);
}

NetworkGraph builtin(const std::string& name) {
    if (name == "resnet50") return resnet50();
    if (name == "mobilenet-v1") return mobilenet_v1();
    if (name == "deit-base") return deit_base(false);
    if (name == "deit-base-headdim") return deit_base(true);
    if (name == "toy-cnn") return toy_cnn({});
    if (name == "toy-cnn-residual") {
        ToyCnnParams p;
        p.residual_block = true;
        return toy_cnn(p);
    }
    if (name == "toy-transformer") return toy_transformer({});
    if (name == "toy-transformer-headdim") {
        ToyTransformerParams p;
        p.head_dim_axis = true;
        return toy_transformer(p);
    }
    throw ConfigError("unknown built-in model '" + name + "'");
}

std::vector<std::string> builtin_names() {
    return {"resnet50",        "mobilenet-v1",     "deit-base",
            "deit-base-headdim", "toy-cnn",        "toy-cnn-residual",
            "toy-transformer", "toy-transformer-headdim"};
}

WeightStore init_weights(const NetworkGraph& graph, RngStream rng) {
    WeightStore store;
    const auto shapes = expected_weight_shapes(graph);
    for (const auto& [layer_name, tensors] : shapes) {
        const LayerSpec* layer = graph.find_layer(layer_name);
        RngStream lrng = rng.fork(std::hash<std::string>{}(layer_name));
        for (const auto& [tname, shape] : tensors) {
            Tensor t(shape);
            const bool is_kernel = tname.find("kernel") != std::string::npos;
            if (is_kernel) {
                std::int64_t fan_in = 1;
                for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
                const float scale = std::sqrt(2.0f / static_cast<float>(fan_in));
                for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = lrng.normal(0.0f, scale);
            } else if (tname == "gamma" || tname == "var") {
                for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = 1.0f;
            } else if (tname == "cls" || tname == "pos") {
                for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = lrng.normal(0.0f, 0.02f);
            }
            // beta, mean and biases stay zero.
            store.put(layer_name, tname, std::move(t));
        }
        (void)layer;
    }
    return store;
}

}  // namespace evoprune::models
