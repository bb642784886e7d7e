#include "evoprune/reconstruct.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "evoprune/ops.hpp"

namespace evoprune {

namespace {

constexpr const char* kInputName = "input";

double frob_residual(const Tensor& x, const Tensor& w_t, const Tensor& y) {
    // ||x * w_t^T - y||_F with double accumulation.
    MatrixD pred = x.mat().cast<double>() * w_t.mat().cast<double>().transpose();
    MatrixD diff = pred - y.mat().cast<double>();
    return diff.norm();
}

Tensor transpose2d(const Tensor& t) {
    Tensor out({t.dim(1), t.dim(0)});
    out.mat() = t.mat().transpose();
    return out;
}

// Rows of a rank-3 activation [N x T x F] gathered at per-image token ids.
Tensor gather_tokens(const Tensor& act, const std::vector<std::vector<int>>& token_ids) {
    const int n = act.dim(0), t = act.dim(1), f = act.dim(2);
    std::size_t rows = 0;
    for (const auto& ids : token_ids) rows += ids.size();
    Tensor out({static_cast<int>(rows), f});
    std::size_t r = 0;
    for (int img = 0; img < n; ++img)
        for (int tok : token_ids[static_cast<std::size_t>(img)]) {
            std::copy(act.data() + (static_cast<std::int64_t>(img) * t + tok) * f,
                      act.data() + (static_cast<std::int64_t>(img) * t + tok + 1) * f,
                      out.data() + static_cast<std::int64_t>(r) * f);
            ++r;
        }
    return out;
}

// Columns of a row matrix.
Tensor take_cols(const Tensor& t, const std::vector<int>& cols) {
    const int r = t.dim(0), c = t.dim(1);
    Tensor out({r, static_cast<int>(cols.size())});
    for (int i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out[static_cast<std::int64_t>(i) * static_cast<std::int64_t>(cols.size()) +
                static_cast<std::int64_t>(j)] = t[static_cast<std::int64_t>(i) * c + cols[j]];
    return out;
}

void subtract_bias_rows(Tensor& y, const Tensor* bias) {
    if (!bias || bias->empty()) return;
    const int r = y.dim(0), c = y.dim(1);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) y[static_cast<std::int64_t>(i) * c + j] -= (*bias)[j];
}

std::vector<int> identity_indices(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
    return v;
}

// Conv output activation gathered at sampled output positions, restricted to
// kept output channels: [(N*d) x |kept|].
Tensor gather_conv_targets(const Tensor& act, const std::vector<int>& positions, int d,
                           const std::vector<int>& kept_out) {
    const int n = act.dim(0), c = act.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(act.dim(2)) * act.dim(3);
    Tensor out({n * d, static_cast<int>(kept_out.size())});
    for (int img = 0; img < n; ++img)
        for (int i = 0; i < d; ++i) {
            const std::int64_t pos = positions[static_cast<std::size_t>(img * d + i)];
            float* row = out.data() +
                         static_cast<std::int64_t>(img * d + i) * static_cast<std::int64_t>(
                                                                      kept_out.size());
            for (std::size_t j = 0; j < kept_out.size(); ++j)
                row[j] = act[(static_cast<std::int64_t>(img) * c + kept_out[j]) * plane + pos];
        }
    return out;
}

}  // namespace

std::string ReconstructionReport::to_jsonl() const {
    std::string out;
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof(buf),
                      "{\"layer\":\"%s\",\"rows\":%d,\"cols\":%d,\"residual_before\":%.9g,"
                      "\"residual_after\":%.9g,\"ridge_used\":%s}\n",
                      r.layer.c_str(), r.rows, r.cols, r.residual_before, r.residual_after,
                      r.ridge_used ? "true" : "false");
        out += buf;
    }
    return out;
}

PatchSample sample_patches(const Tensor& feature, int k1, int k2, int stride, int padding, int d,
                           RngStream& rng) {
    if (feature.rank() != 4)
        throw DimensionError("sample_patches: expected [N x C x H x W] feature");
    const int n = feature.dim(0), c = feature.dim(1);
    const int oh = ops::conv_out_extent(feature.dim(2), k1, stride, padding);
    const int ow = ops::conv_out_extent(feature.dim(3), k2, stride, padding);
    const int total = oh * ow;
    if (d < 1 || d > total)
        throw BoundsError("sample_patches: d=" + std::to_string(d) + " outside [1, " +
                          std::to_string(total) + "] valid positions");

    PatchSample ps;
    ps.positions.reserve(static_cast<std::size_t>(n) * d);
    Tensor col = ops::im2col(feature, k1, k2, stride, padding);  // [(N*oh*ow) x (C*K1*K2)]
    const int cols = c * k1 * k2;
    ps.design = Tensor({n * d, cols});
    for (int img = 0; img < n; ++img) {
        const std::vector<int> picks = rng.sample_without_replacement(total, d);
        for (int i = 0; i < d; ++i) {
            const int pos = picks[static_cast<std::size_t>(i)];
            ps.positions.push_back(pos);
            std::copy(col.data() + (static_cast<std::int64_t>(img) * total + pos) * cols,
                      col.data() + (static_cast<std::int64_t>(img) * total + pos + 1) * cols,
                      ps.design.data() + static_cast<std::int64_t>(img * d + i) * cols);
        }
    }
    return ps;
}

std::vector<int> sample_tokens(int token_count, int d, RngStream& rng) {
    if (d < 1 || d > token_count)
        throw BoundsError("sample_tokens: d=" + std::to_string(d) + " outside [1, " +
                          std::to_string(token_count) + "]");
    std::vector<int> out = {0};
    if (d > 1) {
        std::vector<int> rest = rng.sample_without_replacement(token_count - 1, d - 1);
        for (int r : rest) out.push_back(r + 1);
    }
    return out;
}

Tensor reconstruct_layer(const Tensor& x_full, const Tensor& kernel,
                         const std::vector<int>& kept_in, ops::LeastSquaresInfo* info) {
    if (kernel.rank() != 4) throw DimensionError("reconstruct_layer: expected rank-4 kernel");
    const int cout = kernel.dim(0), cin = kernel.dim(1), k1 = kernel.dim(2), k2 = kernel.dim(3);
    const int taps = k1 * k2;
    if (x_full.dim(1) != cin * taps)
        throw DimensionError("reconstruct_layer: design matrix " + x_full.shape_string() +
                             " does not match kernel " + kernel.shape_string());

    Tensor w_flat = kernel.reshaped({cout, cin * taps});
    Tensor y = ops::matmul(x_full, transpose2d(w_flat));

    std::vector<int> cols;
    cols.reserve(kept_in.size() * static_cast<std::size_t>(taps));
    for (int ch : kept_in)
        for (int t = 0; t < taps; ++t) cols.push_back(ch * taps + t);
    Tensor x_kept = take_cols(x_full, cols);

    Tensor w = ops::least_squares_solve(x_kept, y, info);  // [kept*taps x cout]
    return transpose2d(w).reshaped({cout, static_cast<int>(kept_in.size()), k1, k2});
}

namespace {

struct ReconContext {
    const NetworkGraph& orig_graph;
    const WeightStore& orig_weights;
    const std::unordered_map<std::string, Tensor>& orig_acts;
    const std::map<std::string, ResolvedSlices>& flow;
    WeightStore& weights;  // progressively updated
    ReconstructionReport& report;
    const CalibrationBatch& calib;

    const Tensor& orig_act(const std::string& name) const {
        return name == kInputName ? calib.inputs : orig_acts.at(name);
    }
};

// Solves the system, keeps whichever of (current, solved) has the lower
// sampled residual, and records the pair. Returns the adopted row matrix.
// Float rounding of the solution can otherwise nudge an already-exact sliced
// system above its own residual floor.
Tensor solve_and_adopt(ReconContext& ctx, const std::string& name, const Tensor& x,
                       const Tensor& y, const Tensor& current_rows) {
    ops::LeastSquaresInfo inf;
    Tensor solved = transpose2d(ops::least_squares_solve(x, y, &inf));
    LayerReconRecord r;
    r.layer = name;
    r.rows = x.dim(0);
    r.cols = x.dim(1);
    r.residual_before = frob_residual(x, current_rows, y);
    const double after = frob_residual(x, solved, y);
    r.ridge_used = inf.ridge_used;
    if (after <= r.residual_before) {
        r.residual_after = after;
    } else {
        r.residual_after = r.residual_before;
        solved = current_rows;
    }
    ctx.report.records.push_back(std::move(r));
    return solved;
}

void reconstruct_conv(ReconContext& ctx, const LayerSpec& layer, const Tensor& input_act,
                      RngStream rng) {
    const LayerSpec* orig_layer = ctx.orig_graph.find_layer(layer.name);
    const Tensor& orig_out = ctx.orig_acts.at(layer.name);
    const ResolvedSlices& slices = ctx.flow.at(layer.name);
    const int stride = orig_layer->hp("stride");
    const int padding = orig_layer->hp_or("padding", 0);
    const int k = orig_layer->hp("kernel");

    const int total = ops::conv_out_extent(input_act.dim(2), k, stride, padding) *
                      ops::conv_out_extent(input_act.dim(3), k, stride, padding);
    const int d = std::min(ctx.calib.patches_per_image, total);

    if (orig_layer->hp_or("depthwise", 0)) {
        // Depthwise: independent per-channel K*K systems on the kept channels.
        PatchSample ps = sample_patches(input_act, k, k, stride, padding, d, rng);
        const std::vector<int> kept =
            slices.in.empty() ? identity_indices(input_act.dim(1)) : slices.in;
        Tensor& kernel = ctx.weights.entries[layer.name]["kernel"];
        const int taps = k * k;
        Tensor x_all = ps.design;  // [(N*d) x (kept*taps)] (input already pruned)
        Tensor y = gather_conv_targets(orig_out, ps.positions, d, kept);
        subtract_bias_rows(y, ctx.weights.get_if(layer.name, "bias"));
        Tensor before = kernel.reshaped({kernel.dim(0), taps});
        Tensor solved = before;
        bool ridge = false;
        // Independent K*K systems, each keeping the better of (sliced, solved).
        double res_before = 0.0, res_after = 0.0;
        for (std::size_t c = 0; c < kept.size(); ++c) {
            std::vector<int> cols;
            for (int t = 0; t < taps; ++t) cols.push_back(static_cast<int>(c) * taps + t);
            Tensor xc = take_cols(x_all, cols);
            Tensor yc = take_cols(y, {static_cast<int>(c)});
            ops::LeastSquaresInfo inf;
            Tensor wc = ops::least_squares_solve(xc, yc, &inf);
            ridge = ridge || inf.ridge_used;
            Tensor bc({1, taps});
            for (int t = 0; t < taps; ++t)
                bc[t] = before[static_cast<std::int64_t>(c) * taps + t];
            const double rb = frob_residual(xc, bc, yc);
            const double ra = frob_residual(xc, transpose2d(wc), yc);
            res_before += rb * rb;
            if (ra <= rb) {
                res_after += ra * ra;
                for (int t = 0; t < taps; ++t)
                    solved[static_cast<std::int64_t>(c) * taps + t] = wc[t];
            } else {
                res_after += rb * rb;
            }
        }
        LayerReconRecord r;
        r.layer = layer.name;
        r.rows = x_all.dim(0);
        r.cols = taps;
        r.residual_before = std::sqrt(res_before);
        r.residual_after = std::sqrt(res_after);
        r.ridge_used = ridge;
        ctx.report.records.push_back(std::move(r));
        kernel = solved.reshaped({kernel.dim(0), 1, k, k});
        return;
    }

    PatchSample ps = sample_patches(input_act, k, k, stride, padding, d, rng);
    const std::vector<int> kept_out =
        slices.out.empty() ? identity_indices(orig_out.dim(1)) : slices.out;
    Tensor y = gather_conv_targets(orig_out, ps.positions, d, kept_out);
    subtract_bias_rows(y, ctx.weights.get_if(layer.name, "bias"));

    Tensor& kernel = ctx.weights.entries[layer.name]["kernel"];
    const int cols = kernel.dim(1) * kernel.dim(2) * kernel.dim(3);
    Tensor adopted = solve_and_adopt(ctx, layer.name, ps.design, y,
                                     kernel.reshaped({kernel.dim(0), cols}));
    kernel = adopted.reshaped(kernel.shape());
}

void reconstruct_dense(ReconContext& ctx, const LayerSpec& layer, const Tensor& input_act) {
    const Tensor& orig_out_full = ctx.orig_acts.at(layer.name);
    const ResolvedSlices& slices = ctx.flow.at(layer.name);

    Tensor x = input_act;
    if (x.rank() == 3) x = x.reshaped({x.dim(0) * x.dim(1), x.dim(2)});
    Tensor y_full = orig_out_full;
    if (y_full.rank() == 3)
        y_full = y_full.reshaped({y_full.dim(0) * y_full.dim(1), y_full.dim(2)});

    Tensor y = slices.out.empty() || layer.kind == LayerKind::classifier
                   ? y_full
                   : take_cols(y_full, slices.out);
    subtract_bias_rows(y, ctx.weights.get_if(layer.name, "bias"));

    Tensor& kernel = ctx.weights.entries[layer.name]["kernel"];
    kernel = solve_and_adopt(ctx, layer.name, x, y, kernel);
}

std::vector<std::vector<int>> per_image_tokens(ReconContext& ctx, int n, int t, RngStream& rng) {
    const int d = std::min(ctx.calib.tokens_per_image, t);
    std::vector<std::vector<int>> ids;
    ids.reserve(static_cast<std::size_t>(n));
    for (int img = 0; img < n; ++img) ids.push_back(sample_tokens(t, d, rng));
    return ids;
}

void reconstruct_attention(ReconContext& ctx, const LayerSpec& layer, const Tensor& input_act,
                           RngStream rng) {
    const LayerSpec* orig_layer = ctx.orig_graph.find_layer(layer.name);
    const ResolvedSlices& slices = ctx.flow.at(layer.name);
    const int heads = orig_layer->hp("head_count");
    const int dh = orig_layer->hp("head_dim");
    const bool by_heads = orig_layer->hp_or("prune_axis", kPruneAxisHeads) == kPruneAxisHeads;
    const std::vector<int> sel =
        slices.out.empty() ? identity_indices(by_heads ? heads : dh) : slices.out;

    const int n = input_act.dim(0), t = input_act.dim(1);
    auto token_ids = per_image_tokens(ctx, n, t, rng);

    // System 1: QKV rows over the sampled tokens.
    const Tensor& orig_in = ctx.orig_act(layer.inputs[0]);
    Tensor x = gather_tokens(input_act, token_ids);        // pruned design
    Tensor x_orig = gather_tokens(orig_in, token_ids);     // original features
    Tensor y_full = ops::dense_forward(x_orig, ctx.orig_weights.get(layer.name, "qkv_kernel"),
                                       ctx.orig_weights.get_if(layer.name, "qkv_bias"));
    std::vector<int> rows;  // kept QKV output columns
    for (int s = 0; s < 3; ++s) {
        if (by_heads) {
            for (int h : sel)
                for (int j = 0; j < dh; ++j) rows.push_back((s * heads + h) * dh + j);
        } else {
            for (int h = 0; h < heads; ++h)
                for (int j : sel) rows.push_back((s * heads + h) * dh + j);
        }
    }
    Tensor y = take_cols(y_full, rows);
    subtract_bias_rows(y, ctx.weights.get_if(layer.name, "qkv_bias"));

    Tensor& qkv = ctx.weights.entries[layer.name]["qkv_kernel"];
    qkv = solve_and_adopt(ctx, layer.name + ":qkv", x, y, qkv);

    // System 2: projection over the reconstructed heads' outputs.
    const int kept_heads = by_heads ? static_cast<int>(sel.size()) : heads;
    const int kept_dh = by_heads ? dh : static_cast<int>(sel.size());
    Tensor concat;
    ops::attention_forward(input_act, qkv, ctx.weights.get_if(layer.name, "qkv_bias"),
                           ctx.weights.get(layer.name, "proj_kernel"),
                           ctx.weights.get_if(layer.name, "proj_bias"), kept_heads, kept_dh,
                           &concat);
    Tensor x_proj = gather_tokens(concat, token_ids);
    Tensor y_proj = gather_tokens(ctx.orig_acts.at(layer.name), token_ids);
    subtract_bias_rows(y_proj, ctx.weights.get_if(layer.name, "proj_bias"));

    Tensor& proj = ctx.weights.entries[layer.name]["proj_kernel"];
    proj = solve_and_adopt(ctx, layer.name + ":proj", x_proj, y_proj, proj);
}

void reconstruct_mlp(ReconContext& ctx, const LayerSpec& layer, const Tensor& input_act,
                     RngStream rng) {
    const ResolvedSlices& slices = ctx.flow.at(layer.name);
    const LayerSpec* orig_layer = ctx.orig_graph.find_layer(layer.name);
    const std::vector<int> sel =
        slices.out.empty() ? identity_indices(orig_layer->hp("hidden_dim")) : slices.out;

    const int n = input_act.dim(0), t = input_act.dim(1);
    auto token_ids = per_image_tokens(ctx, n, t, rng);

    const Tensor& orig_in = ctx.orig_act(layer.inputs[0]);
    Tensor x = gather_tokens(input_act, token_ids);
    Tensor x_orig = gather_tokens(orig_in, token_ids);

    // FC1 system.
    Tensor y1_full = ops::dense_forward(x_orig, ctx.orig_weights.get(layer.name, "fc1_kernel"),
                                        ctx.orig_weights.get_if(layer.name, "fc1_bias"));
    Tensor y1 = take_cols(y1_full, sel);
    subtract_bias_rows(y1, ctx.weights.get_if(layer.name, "fc1_bias"));
    Tensor& fc1 = ctx.weights.entries[layer.name]["fc1_kernel"];
    fc1 = solve_and_adopt(ctx, layer.name + ":fc1", x, y1, fc1);

    // FC2 system: design from the reconstructed FC1 at the same tokens.
    Tensor hidden = ops::gelu(
        ops::dense_forward(x, fc1, ctx.weights.get_if(layer.name, "fc1_bias")));
    Tensor y2 = gather_tokens(ctx.orig_acts.at(layer.name), token_ids);
    subtract_bias_rows(y2, ctx.weights.get_if(layer.name, "fc2_bias"));
    Tensor& fc2 = ctx.weights.entries[layer.name]["fc2_kernel"];
    fc2 = solve_and_adopt(ctx, layer.name + ":fc2", hidden, y2, fc2);
}

}  // namespace

ReconstructionResult reconstruct_network(const Subnetwork& sub, const NetworkGraph& orig_graph,
                                         const WeightStore& orig_weights,
                                         const CalibrationBatch& calib, RngStream rng) {
    ReconstructionResult result;
    result.weights = sub.weights;

    const auto orig_acts = forward_collect(orig_graph, orig_weights, calib.inputs);
    const auto flow = selection_flow(orig_graph, sub.selection);

    ReconContext ctx{orig_graph,     orig_weights,  orig_acts, flow,
                     result.weights, result.report, calib};

    std::unordered_map<std::string, Tensor> acts;
    std::uint64_t layer_index = 0;
    for (const auto& layer : sub.graph.layers) {
        const Tensor& input_act =
            layer.inputs[0] == kInputName ? calib.inputs : acts.at(layer.inputs[0]);
        RngStream layer_rng = rng.fork(layer_index++);

        // A layer is reconstructed when any of its sliced weights shrank.
        switch (layer.kind) {
            case LayerKind::conv2d: {
                const Tensor& orig_k = orig_weights.get(layer.name, "kernel");
                if (result.weights.get(layer.name, "kernel").shape() != orig_k.shape())
                    reconstruct_conv(ctx, layer, input_act, layer_rng);
                break;
            }
            case LayerKind::dense:
            case LayerKind::classifier: {
                const Tensor& orig_k = orig_weights.get(layer.name, "kernel");
                if (result.weights.get(layer.name, "kernel").shape() != orig_k.shape())
                    reconstruct_dense(ctx, layer, input_act);
                break;
            }
            case LayerKind::attention: {
                const Tensor& orig_k = orig_weights.get(layer.name, "qkv_kernel");
                if (result.weights.get(layer.name, "qkv_kernel").shape() != orig_k.shape())
                    reconstruct_attention(ctx, layer, input_act, layer_rng);
                break;
            }
            case LayerKind::mlp_block: {
                const Tensor& orig_k = orig_weights.get(layer.name, "fc1_kernel");
                if (result.weights.get(layer.name, "fc1_kernel").shape() != orig_k.shape())
                    reconstruct_mlp(ctx, layer, input_act, layer_rng);
                break;
            }
            default:
                break;
        }

        // Advance the pruned forward pass with the (possibly updated) weights.
        std::vector<const Tensor*> inputs;
        for (const auto& in : layer.inputs)
            inputs.push_back(in == kInputName ? &calib.inputs : &acts.at(in));
        acts[layer.name] = eval_layer(layer, result.weights, inputs);
    }
    return result;
}

}  // namespace evoprune
