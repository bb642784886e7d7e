#pragma once

#include <string>
#include <vector>

#include "evoprune/ops.hpp"
#include "evoprune/prunespace.hpp"

namespace evoprune {

// Calibration inputs drawn from the reconstruction split. patches_per_image
// bounds the spatial positions sampled per conv layer; tokens_per_image the
// tokens per attention/mlp system (the cls token, index 0, is always kept).
struct CalibrationBatch {
    Tensor inputs;
    int patches_per_image = 10;
    int tokens_per_image = 20;
};

struct LayerReconRecord {
    std::string layer;
    int rows = 0;
    int cols = 0;
    double residual_before = 0.0;
    double residual_after = 0.0;
    bool ridge_used = false;
};

struct ReconstructionReport {
    std::vector<LayerReconRecord> records;
    // JSON lines, one record per layer/system.
    std::string to_jsonl() const;
};

// d spatial positions per image, uniform without replacement, unrolled
// im2col-style to [(N*d) x (C*K1*K2)]. positions[n*d + i] indexes the i-th
// sampled output position (row-major oy*W'+ox) of image n, reusable for the
// target gather.
struct PatchSample {
    Tensor design;
    std::vector<int> positions;
};
PatchSample sample_patches(const Tensor& feature, int k1, int k2, int stride, int padding, int d,
                           RngStream& rng);

// Token indices per image for transformer systems: {0} plus d-1 random others.
std::vector<int> sample_tokens(int token_count, int d, RngStream& rng);

// Single-layer weight recovery: targets Y = X_full * W^T, design X' =
// X_full restricted to the kept input channels (all K1*K2 taps each), and
// W' = least_squares_solve(X', Y) reshaped to [C_out x |kept| x K1 x K2].
Tensor reconstruct_layer(const Tensor& x_full, const Tensor& kernel,
                         const std::vector<int>& kept_in,
                         ops::LeastSquaresInfo* info = nullptr);

struct ReconstructionResult {
    WeightStore weights;
    ReconstructionReport report;
};

// Walks the pruned graph in topological order and re-solves every pruned
// layer: inputs come from the partially reconstructed pruned network, targets
// from the original network's activations restricted to the kept output
// channels. Attention blocks solve QKV and projection as two dense systems
// over sampled tokens; mlp blocks solve FC1/FC2 likewise. Unpruned layers and
// normalization parameters pass through sliced.
ReconstructionResult reconstruct_network(const Subnetwork& sub, const NetworkGraph& orig_graph,
                                         const WeightStore& orig_weights,
                                         const CalibrationBatch& calib, RngStream rng);

}  // namespace evoprune
