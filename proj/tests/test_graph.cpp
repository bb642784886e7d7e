#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "evoprune/graph.hpp"
#include "evoprune/models.hpp"
#include "evoprune/ops.hpp"

using namespace evoprune;

namespace {

NetworkGraph two_layer_mlp() {
    NetworkGraph g;
    g.input_shape = {4};
    g.class_count = 3;
    LayerSpec d1{"d1", LayerKind::dense, {{"out_features", 5}}, {"input"}};
    LayerSpec fc{"fc", LayerKind::classifier, {}, {"d1"}};
    g.layers = {d1, fc};
    g.groups = {{0, {{"d1", Axis::out_channels}, {"fc", Axis::in_channels}}, 5}};
    return g;
}

WeightStore mlp_weights(const NetworkGraph& g) {
    WeightStore w;
    for (const auto& [layer, tensors] : expected_weight_shapes(g))
        for (const auto& [name, shape] : tensors) w.put(layer, name, Tensor(shape));
    return w;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double mx = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        mx = std::max(mx, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return mx;
}

}  // namespace

TEST_CASE("well-formed two layer mlp validates cleanly") {
    NetworkGraph g = two_layer_mlp();
    WeightStore w = mlp_weights(g);
    CHECK(validate(g, w).empty());
}

TEST_CASE("add layer with mismatched inputs is diagnosed by name") {
    NetworkGraph g;
    g.input_shape = {4};
    g.class_count = 2;
    g.layers = {
        {"a", LayerKind::dense, {{"out_features", 5}}, {"input"}},
        {"b", LayerKind::dense, {{"out_features", 6}}, {"input"}},
        {"sum", LayerKind::add, {}, {"a", "b"}},
        {"fc", LayerKind::classifier, {}, {"sum"}},
    };
    auto diags = validate_structure(g);
    REQUIRE(!diags.empty());
    bool named = false;
    for (const auto& d : diags) named = named || d.find("sum") != std::string::npos;
    CHECK(named);
}

TEST_CASE("conv kernel with swapped channel dims is diagnosed") {
    NetworkGraph g;
    g.input_shape = {3, 8, 8};
    g.class_count = 2;
    g.layers = {
        {"c1", LayerKind::conv2d,
         {{"out_channels", 5}, {"kernel", 3}, {"stride", 1}, {"padding", 1}}, {"input"}},
        {"pool", LayerKind::global_pool, {}, {"c1"}},
        {"fc", LayerKind::classifier, {}, {"pool"}},
    };
    g.groups = {{0, {{"c1", Axis::out_channels}, {"fc", Axis::in_channels}}, 5}};
    WeightStore w;
    w.put("c1", "kernel", Tensor({3, 5, 3, 3}));  // C_in and C_out swapped
    w.put("fc", "kernel", Tensor({2, 5}));
    auto diags = validate(g, w);
    REQUIRE(!diags.empty());
    bool found = false;
    for (const auto& d : diags)
        found = found || (d.find("c1") != std::string::npos &&
                          d.find("shape") != std::string::npos);
    CHECK(found);
}

TEST_CASE("built-in specs validate structurally") {
    for (const auto& name : models::builtin_names()) {
        NetworkGraph g = models::builtin(name);
        auto diags = validate_structure(g);
        for (const auto& d : diags) MESSAGE(name, ": ", d);
        CHECK(diags.empty());
    }
}

TEST_CASE("resnet50 FLOPs match the published budget") {
    NetworkGraph g = models::resnet50();
    const std::int64_t flops = count_flops(g);
    CHECK(flops == 4089184256LL);  // hand-summed per-layer MACs
    CHECK(std::abs(static_cast<double>(flops) - 4111e6) <= 0.01 * 4111e6);
}

TEST_CASE("mobilenet v1 FLOPs match the published budget") {
    const std::int64_t flops = count_flops(models::mobilenet_v1());
    CHECK(flops == 568740352LL);
    CHECK(std::abs(static_cast<double>(flops) - 569e6) <= 0.01 * 569e6);
}

TEST_CASE("deit-base FLOPs match the published budget") {
    const std::int64_t flops = count_flops(models::deit_base());
    CHECK(flops == 17563828224LL);
    CHECK(std::abs(static_cast<double>(flops) - 17.8e9) <= 0.02 * 17.8e9);
}

TEST_CASE("single dense layer FLOPs by hand") {
    NetworkGraph g;
    g.input_shape = {10};
    g.class_count = 10;
    g.layers = {{"d", LayerKind::dense, {{"out_features", 10}}, {"input"}}};
    g.groups = {{0, {{"d", Axis::out_channels}}, 10}};
    CHECK(count_flops(g) == 100);
}

TEST_CASE("toy cnn FLOPs equal independently hand-derived per-layer sums") {
    models::ToyCnnParams p;  // 3->16->32->32->64 over 12x12, strides 1,2,1,2
    NetworkGraph g = models::toy_cnn(p);
    // conv1: 16*3*9*12*12, conv2: 32*16*9*6*6, conv3: 32*32*9*6*6,
    // conv4: 64*32*9*3*3, fc: 64*8
    const std::int64_t want = 16LL * 3 * 9 * 144 + 32LL * 16 * 9 * 36 + 32LL * 32 * 9 * 36 +
                              64LL * 32 * 9 * 9 + 64LL * 8;
    CHECK(count_flops(g) == want);
}

TEST_CASE("toy transformer FLOPs equal hand-derived per-layer sums") {
    models::ToyTransformerParams p;  // T=16 D=64 H=4 Dh=16 hidden=128, 4 blocks
    NetworkGraph g = models::toy_transformer(p);
    const std::int64_t t = 16, d = 64, m = 64, hidden = 128;
    const std::int64_t per_block = t * d * 3 * m + 2 * 4 * t * t * 16 + t * m * d +
                                   2 * t * d * hidden;
    CHECK(count_flops(g) == 4 * per_block + d * 8);
}

TEST_CASE("count_flops is monotone in every group") {
    NetworkGraph g = models::toy_cnn({});
    const std::int64_t full = count_flops(g);
    for (const auto& grp : g.groups) {
        for (int kept : {1, grp.original_size / 2, grp.original_size - 1}) {
            if (kept < 1) continue;
            std::map<int, int> sizes = {{grp.id, kept}};
            CHECK(count_flops(g, sizes) <= full);
        }
    }
    // Joint shrink never increases either.
    std::map<int, int> all;
    for (const auto& grp : g.groups) all[grp.id] = std::max(1, grp.original_size / 2);
    CHECK(count_flops(g, all) < full);
}

TEST_CASE("count_flops rejects out-of-range kept counts") {
    NetworkGraph g = models::toy_cnn({});
    CHECK_THROWS_AS(count_flops(g, {{g.groups[0].id, 0}}), BoundsError);
    CHECK_THROWS_AS(count_flops(g, {{g.groups[0].id, g.groups[0].original_size + 1}}),
                    BoundsError);
}

TEST_CASE("forward of identity dense network returns its input") {
    NetworkGraph g;
    g.input_shape = {3};
    g.class_count = 3;
    g.layers = {{"fc", LayerKind::classifier, {}, {"input"}}};
    WeightStore w;
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0f;
    w.put("fc", "kernel", eye);
    Tensor batch({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor out = forward(g, w, batch);
    CHECK(max_abs_diff(out, batch) == 0.0);
}

TEST_CASE("zero weights give zero logits") {
    NetworkGraph g = models::toy_cnn({});
    WeightStore w;
    for (const auto& [layer, tensors] : expected_weight_shapes(g))
        for (const auto& [name, shape] : tensors) w.put(layer, name, Tensor(shape));
    // batchnorm var must be nonzero to avoid dividing by eps alone; identity
    // stats keep zeros flowing.
    for (auto& [layer, tensors] : w.entries)
        if (tensors.count("var"))
            for (std::int64_t i = 0; i < tensors["var"].numel(); ++i) tensors["var"][i] = 1.0f;
    Tensor batch({2, 3, 12, 12});
    for (std::int64_t i = 0; i < batch.numel(); ++i) batch[i] = 0.5f;
    Tensor out = forward(g, w, batch);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.0f);
}

TEST_CASE("toy cnn forward equals layer-by-layer kernel composition") {
    models::ToyCnnParams p;
    p.input_hw = 8;
    NetworkGraph g = models::toy_cnn(p);
    WeightStore w = models::init_weights(g, RngStream(303, 0));
    Tensor batch({2, 3, 8, 8});
    RngStream rng(404, 0);
    for (std::int64_t i = 0; i < batch.numel(); ++i) batch[i] = rng.normal();

    Tensor x = batch;
    for (int i = 1; i <= 4; ++i) {
        const std::string c = "conv" + std::to_string(i);
        const LayerSpec* l = g.find_layer(c);
        x = ops::conv2d_forward(x, w.get(c, "kernel"), l->hp("stride"), l->hp("padding"));
        x = ops::batchnorm_inference_forward(x, w.get(c + ".bn", "gamma"),
                                             w.get(c + ".bn", "beta"), w.get(c + ".bn", "mean"),
                                             w.get(c + ".bn", "var"));
        x = ops::relu(x);
    }
    x = ops::global_average_pool(x);
    x = ops::dense_forward(x, w.get("fc", "kernel"), w.get_if("fc", "bias"));

    CHECK(max_abs_diff(forward(g, w, batch), x) < 1e-5);
}

TEST_CASE("forward is permutation equivariant within a dependency group") {
    // Permuting a group's channels consistently across producers and
    // consumers must leave the logits unchanged.
    NetworkGraph g = models::toy_cnn({});
    WeightStore w = models::init_weights(g, RngStream(77, 0));
    for (auto& [layer, tensors] : w.entries)
        for (auto& [name, t] : tensors)
            if (name == "mean" || name == "beta")
                for (std::int64_t i = 0; i < t.numel(); ++i)
                    t[i] = 0.01f * static_cast<float>(i % 7);

    Tensor batch({4, 3, 12, 12});
    RngStream rng(88, 1);
    for (std::int64_t i = 0; i < batch.numel(); ++i) batch[i] = rng.normal();
    Tensor base = forward(g, w, batch);

    // Permute the conv2 group (conv2 out, bn2, conv3 in).
    const int c = g.find_layer("conv2")->hp("out_channels");
    std::vector<int> perm(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) perm[static_cast<std::size_t>(i)] = (i + 5) % c;

    WeightStore pw = w;
    {
        Tensor& k2 = pw.entries["conv2"]["kernel"];
        const Tensor old = k2;
        const std::int64_t per_out = old.numel() / c;
        for (int o = 0; o < c; ++o)
            std::copy(old.data() + perm[static_cast<std::size_t>(o)] * per_out,
                      old.data() + (perm[static_cast<std::size_t>(o)] + 1) * per_out,
                      k2.data() + o * per_out);
        for (const char* name : {"gamma", "beta", "mean", "var"}) {
            Tensor& t = pw.entries["conv2.bn"][name];
            const Tensor old_bn = t;
            for (int o = 0; o < c; ++o) t[o] = old_bn[perm[static_cast<std::size_t>(o)]];
        }
        Tensor& k3 = pw.entries["conv3"]["kernel"];
        const Tensor old3 = k3;
        const int out3 = old3.dim(0), in3 = old3.dim(1), kk = old3.dim(2) * old3.dim(3);
        for (int o = 0; o < out3; ++o)
            for (int i = 0; i < in3; ++i)
                std::copy(old3.data() + (o * in3 + perm[static_cast<std::size_t>(i)]) * kk,
                          old3.data() + (o * in3 + perm[static_cast<std::size_t>(i)] + 1) * kk,
                          k3.data() + (o * in3 + i) * kk);
    }
    Tensor permuted = forward(g, pw, batch);
    CHECK(max_abs_diff(base, permuted) <= 1e-4);
}

TEST_CASE("forward attaches layer name to kernel dimension errors") {
    NetworkGraph g = two_layer_mlp();
    WeightStore w = mlp_weights(g);
    w.entries["d1"]["kernel"] = Tensor({5, 7});  // wrong fan-in
    Tensor batch({1, 4});
    CHECK_THROWS_WITH_AS(forward(g, w, batch), doctest::Contains("d1"), DimensionError);
}

TEST_CASE("group sizes must match member axes") {
    NetworkGraph g = two_layer_mlp();
    g.groups[0].original_size = 4;  // actual width is 5
    auto diags = validate_structure(g);
    CHECK(!diags.empty());
}
