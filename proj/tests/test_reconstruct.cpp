#include <doctest.h>

#include <cmath>
#include <set>

#include "evoprune/models.hpp"
#include "evoprune/reconstruct.hpp"

using namespace evoprune;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double mx = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        mx = std::max(mx, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return mx;
}

Tensor random_batch(std::vector<int> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    RngStream rng(seed, 900);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    return t;
}

Genome genome_with_ratio(const SpaceSpec& space, double ratio) {
    Genome g;
    for (const auto& gene : space.genes) {
        int v = gene.lower +
                gene.step * static_cast<int>(std::lround(ratio * (gene.lattice_size() - 1)));
        g.values.push_back(std::min(gene.upper, std::max(gene.lower, v)));
    }
    return g;
}

double residual(const Tensor& x, const Tensor& w_rows, const Tensor& y) {
    // ||x * w_rows^T - y||_F
    Tensor wt({w_rows.dim(1), w_rows.dim(0)});
    wt.mat() = w_rows.mat().transpose();
    Tensor pred = ops::matmul(x, wt);
    double acc = 0.0;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const double d = pred[i] - y[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

}  // namespace

TEST_CASE("sample_patches with d equal to all positions matches im2col") {
    Tensor feature = random_batch({2, 3, 5, 5}, 1);
    RngStream rng(2, 0);
    PatchSample ps = sample_patches(feature, 3, 3, 1, 1, 25, rng);
    Tensor full = ops::im2col(feature, 3, 3, 1, 1);
    REQUIRE(ps.design.dim(0) == 50);
    // Every im2col row of each image appears exactly once.
    for (int img = 0; img < 2; ++img) {
        std::set<int> seen;
        for (int i = 0; i < 25; ++i) {
            const int pos = ps.positions[static_cast<std::size_t>(img * 25 + i)];
            seen.insert(pos);
            for (int c = 0; c < ps.design.dim(1); ++c)
                CHECK(ps.design.at({img * 25 + i, c}) == full.at({img * 25 + pos, c}));
        }
        CHECK(seen.size() == 25);
    }
}

TEST_CASE("sample_patches rows are distinct pixels for a 1x1 kernel") {
    Tensor feature({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    RngStream rng(3, 0);
    PatchSample ps = sample_patches(feature, 1, 1, 1, 0, 2, rng);
    CHECK(ps.design.dim(0) == 2);
    CHECK(ps.design[0] != ps.design[1]);
}

TEST_CASE("sample_patches is reproducible and bounds-checked") {
    Tensor feature = random_batch({1, 2, 4, 4}, 4);
    RngStream a(5, 1), b(5, 1);
    PatchSample pa = sample_patches(feature, 2, 2, 1, 0, 4, a);
    PatchSample pb = sample_patches(feature, 2, 2, 1, 0, 4, b);
    CHECK(pa.positions == pb.positions);
    CHECK(max_abs_diff(pa.design, pb.design) == 0.0);
    RngStream c(5, 1);
    CHECK_THROWS_AS(sample_patches(feature, 2, 2, 1, 0, 10, c), BoundsError);
}

TEST_CASE("sample_tokens always includes the cls token") {
    RngStream rng(6, 0);
    for (int trial = 0; trial < 50; ++trial) {
        auto toks = sample_tokens(12, 5, rng);
        CHECK(toks.size() == 5);
        CHECK(toks[0] == 0);
        std::set<int> s(toks.begin(), toks.end());
        CHECK(s.size() == 5);
        for (int t : s) CHECK(t < 12);
    }
}

TEST_CASE("reconstruct_layer with all channels kept reproduces targets") {
    Tensor x = random_batch({40, 2 * 9}, 7);
    Tensor kernel = random_batch({3, 2, 3, 3}, 8);
    ops::LeastSquaresInfo info;
    Tensor w = reconstruct_layer(x, kernel, {0, 1}, &info);
    CHECK(w.shape() == kernel.shape());
    Tensor y = ops::matmul(x, [&] {
        Tensor t({2 * 9, 3});
        t.mat() = kernel.reshaped({3, 18}).mat().transpose();
        return t;
    }());
    CHECK(residual(x, w.reshaped({3, 18}), y) < 1e-4);
}

TEST_CASE("reconstruct_layer scalar closed form for a kept 1x1 conv channel") {
    // C_in = 2, keep channel 0. W' = (x0^T x0)^-1 x0^T (x0 w0 + x1 w1).
    const int n = 30;
    Tensor x = random_batch({n, 2}, 9);
    Tensor kernel({1, 2, 1, 1}, {1.5f, -0.75f});
    Tensor w = reconstruct_layer(x, kernel, {0});
    double x0x0 = 0.0, x0y = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x0 = x[i * 2], x1 = x[i * 2 + 1];
        const double y = 1.5 * x0 - 0.75 * x1;
        x0x0 += x0 * x0;
        x0y += x0 * y;
    }
    CHECK(w[0] == doctest::Approx(x0y / x0x0).epsilon(1e-4));
}

TEST_CASE("reconstructed residual never exceeds the naively sliced residual") {
    RngStream seeds(10, 0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::uint64_t s = seeds.next_u64();
        Tensor x = random_batch({50, 4 * 4}, s);
        Tensor kernel = random_batch({3, 4, 2, 2}, s ^ 0xabcdef);
        const std::vector<int> kept = {0, 2};
        Tensor w = reconstruct_layer(x, kernel, kept);

        Tensor wt({16, 3});
        wt.mat() = kernel.reshaped({3, 16}).mat().transpose();
        Tensor y = ops::matmul(x, wt);

        std::vector<int> cols;
        for (int ch : kept)
            for (int t = 0; t < 4; ++t) cols.push_back(ch * 4 + t);
        Tensor xk({50, static_cast<int>(cols.size())});
        for (int i = 0; i < 50; ++i)
            for (std::size_t j = 0; j < cols.size(); ++j)
                xk[i * static_cast<int>(cols.size()) + static_cast<int>(j)] =
                    x[i * 16 + cols[j]];

        // Naive slice keeps the original coefficients of the kept channels.
        Tensor sliced({3, static_cast<int>(cols.size())});
        for (int o = 0; o < 3; ++o)
            for (std::size_t j = 0; j < cols.size(); ++j)
                sliced[o * static_cast<int>(cols.size()) + static_cast<int>(j)] =
                    kernel[o * 16 + cols[j]];

        const double after = residual(xk, w.reshaped({3, 8}), y);
        const double before = residual(xk, sliced, y);
        CHECK(after <= before + 1e-6);
    }
}

TEST_CASE("full-width reconstruction is the identity pipeline") {
    for (const std::string name : {"toy-cnn", "toy-transformer"}) {
        NetworkGraph g = models::builtin(name);
        WeightStore w = models::init_weights(g, RngStream(100, 0));
        const SpaceMode mode = name == "toy-cnn" ? SpaceMode::cnn_channels
                                                 : SpaceMode::vit_head_count;
        SpaceSpec space = build_space(g, mode);
        Genome full;
        for (const auto& gene : space.genes) full.values.push_back(gene.upper);
        RngStream rng(101, 0);
        Subnetwork sub = decode(g, w, space, full, SelectionStrategy::random, rng);

        std::vector<int> shape = {16};
        for (int d : g.input_shape) shape.push_back(d);
        CalibrationBatch calib{random_batch(shape, 102), 6, 8};
        auto result = reconstruct_network(sub, g, w, calib, RngStream(103, 0));
        CHECK(result.report.records.empty());  // nothing pruned, nothing solved

        Tensor probe = random_batch(shape, 104);
        CHECK(max_abs_diff(forward(g, w, probe),
                           forward(sub.graph, result.weights, probe)) <= 1e-4);
    }
}

TEST_CASE("per-layer report improves every solved system") {
    NetworkGraph g = models::builtin("toy-cnn");
    WeightStore w = models::init_weights(g, RngStream(110, 0));
    SpaceSpec space = build_space(g, SpaceMode::cnn_channels);
    Genome half = genome_with_ratio(space, 0.5);
    RngStream rng(111, 0);
    Subnetwork sub = decode(g, w, space, half, SelectionStrategy::random, rng);

    CalibrationBatch calib{random_batch({32, 3, 12, 12}, 112), 8, 8};
    auto result = reconstruct_network(sub, g, w, calib, RngStream(113, 0));
    REQUIRE(!result.report.records.empty());
    for (const auto& r : result.report.records) {
        CAPTURE(r.layer);
        CHECK(r.residual_after <= r.residual_before + 1e-6);
    }
    // conv2..conv4 and the classifier are all touched by the genome.
    CHECK(result.report.records.size() == 4);

    // The pruned net with reconstructed weights still runs.
    Tensor probe = random_batch({4, 3, 12, 12}, 114);
    Tensor out = forward(sub.graph, result.weights, probe);
    CHECK(out.shape() == std::vector<int>{4, 8});
}

TEST_CASE("transformer reconstruction solves two systems per pruned block") {
    NetworkGraph g = models::builtin("toy-transformer");
    WeightStore w = models::init_weights(g, RngStream(120, 0));
    SpaceSpec space = build_space(g, SpaceMode::vit_head_count);
    Genome half = genome_with_ratio(space, 0.4);
    RngStream rng(121, 0);
    Subnetwork sub = decode(g, w, space, half, SelectionStrategy::random, rng);

    CalibrationBatch calib{random_batch({24, 16, 64}, 122), 6, 8};
    auto result = reconstruct_network(sub, g, w, calib, RngStream(123, 0));
    int qkv = 0, proj = 0, fc1 = 0, fc2 = 0;
    for (const auto& r : result.report.records) {
        CHECK(r.residual_after <= r.residual_before + 1e-6);
        if (r.layer.find(":qkv") != std::string::npos) ++qkv;
        if (r.layer.find(":proj") != std::string::npos) ++proj;
        if (r.layer.find(":fc1") != std::string::npos) ++fc1;
        if (r.layer.find(":fc2") != std::string::npos) ++fc2;
    }
    CHECK(qkv == 4);
    CHECK(proj == 4);
    CHECK(fc1 == 4);
    CHECK(fc2 == 4);

    Tensor probe = random_batch({4, 16, 64}, 124);
    Tensor out = forward(sub.graph, result.weights, probe);
    CHECK(out.shape() == std::vector<int>{4, 8});
}

TEST_CASE("reconstruction determinism: same seed, identical report") {
    NetworkGraph g = models::builtin("toy-cnn");
    WeightStore w = models::init_weights(g, RngStream(130, 0));
    SpaceSpec space = build_space(g, SpaceMode::cnn_channels);
    Genome half = genome_with_ratio(space, 0.5);

    auto run = [&] {
        RngStream rng(131, 0);
        Subnetwork sub = decode(g, w, space, half, SelectionStrategy::random, rng);
        CalibrationBatch calib{random_batch({16, 3, 12, 12}, 132), 6, 8};
        return reconstruct_network(sub, g, w, calib, RngStream(133, 0));
    };
    auto a = run();
    auto b = run();
    CHECK(a.report.to_jsonl() == b.report.to_jsonl());
    for (const auto& [layer, tensors] : a.weights.entries)
        for (const auto& [name, t] : tensors) {
            const Tensor& other = b.weights.get(layer, name);
            for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == other[i]);
        }
}

TEST_CASE("eq1 optimality: random perturbations never lower the sampled residual") {
    // Rebuild one conv system exactly as reconstruct_network solves it, then
    // probe the solution.
    NetworkGraph g = models::builtin("toy-cnn");
    WeightStore w = models::init_weights(g, RngStream(140, 0));
    SpaceSpec space = build_space(g, SpaceMode::cnn_channels);
    Genome half = genome_with_ratio(space, 0.5);
    RngStream rng(141, 0);
    Subnetwork sub = decode(g, w, space, half, SelectionStrategy::random, rng);
    CalibrationBatch calib{random_batch({16, 3, 12, 12}, 142), 8, 8};
    auto result = reconstruct_network(sub, g, w, calib, RngStream(143, 0));

    // conv2 system: inputs from the pruned conv1 stage (identical to the
    // original since conv1 is unpruned), targets from the original conv2.
    auto acts = forward_collect(g, w, calib.inputs);
    const auto flow = selection_flow(g, sub.selection);
    Tensor x_full = acts.at("conv1.relu");
    // restrict to conv2's kept in-channels: conv1 unpruned -> identity.
    RngStream prng = RngStream(143, 0).fork(3);  // conv2 is layer index 3
    PatchSample ps = sample_patches(x_full, 3, 3, 2, 1, 8, prng);
    const auto& kept_out = flow.at("conv2").out;
    Tensor y = Tensor({ps.design.dim(0), static_cast<int>(kept_out.size())});
    {
        Tensor orig_out = acts.at("conv2");
        const int c = orig_out.dim(1);
        const std::int64_t plane =
            static_cast<std::int64_t>(orig_out.dim(2)) * orig_out.dim(3);
        for (int r = 0; r < ps.design.dim(0); ++r) {
            const int img = r / 8;
            const std::int64_t pos = ps.positions[static_cast<std::size_t>(r)];
            for (std::size_t j = 0; j < kept_out.size(); ++j)
                y[static_cast<std::int64_t>(r) * static_cast<std::int64_t>(kept_out.size()) +
                  static_cast<std::int64_t>(j)] =
                    orig_out[(static_cast<std::int64_t>(img) * c + kept_out[j]) * plane + pos];
        }
    }
    const Tensor& solved = result.weights.get("conv2", "kernel");
    Tensor solved_rows = solved.reshaped({solved.dim(0), solved.dim(1) * 9});
    const double base = residual(ps.design, solved_rows, y);

    double wnorm = 0.0;
    for (std::int64_t i = 0; i < solved_rows.numel(); ++i)
        wnorm += solved_rows[i] * solved_rows[i];
    wnorm = std::sqrt(wnorm);
    RngStream perturb(144, 0);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor cand = solved_rows;
        double dnorm = 0.0;
        std::vector<float> delta(static_cast<std::size_t>(cand.numel()));
        for (auto& v : delta) {
            v = perturb.normal();
            dnorm += static_cast<double>(v) * v;
        }
        const float s = static_cast<float>(1e-2 * wnorm / std::sqrt(dnorm));
        for (std::int64_t i = 0; i < cand.numel(); ++i)
            cand[i] += s * delta[static_cast<std::size_t>(i)];
        CHECK(residual(ps.design, cand, y) >= base - 1e-7);
    }
}

TEST_CASE("scaling targets scales the solved weights linearly") {
    Tensor x = random_batch({60, 3 * 4}, 150);
    Tensor kernel = random_batch({2, 3, 2, 2}, 151);
    Tensor w1 = reconstruct_layer(x, kernel, {0, 2});
    Tensor k2 = kernel;
    for (std::int64_t i = 0; i < k2.numel(); ++i) k2[i] *= 3.0f;
    Tensor w2 = reconstruct_layer(x, k2, {0, 2});
    for (std::int64_t i = 0; i < w1.numel(); ++i)
        CHECK(w2[i] == doctest::Approx(3.0f * w1[i]).epsilon(1e-5));
}
