#pragma once

#include <string>
#include <vector>

#include "evoprune/graph.hpp"
#include "evoprune/rng.hpp"

namespace evoprune::models {

// Full-width ImageNet-scale specs, used for FLOPs accounting.
NetworkGraph resnet50();
NetworkGraph mobilenet_v1();
// DeiT-Base, pruning either the head count per block (default) or the
// per-head dimension.
NetworkGraph deit_base(bool head_dim_axis = false);

struct ToyCnnParams {
    int in_channels = 3;
    int input_hw = 12;
    int classes = 8;
    std::vector<int> channels = {16, 32, 32, 64};
    std::vector<int> strides = {1, 2, 1, 2};
    // Tie block 3 to block 2's dependency group through a residual add
    // (requires channels[1] == channels[2] and strides[2] == 1).
    bool residual_block = false;
};
NetworkGraph toy_cnn(const ToyCnnParams& params = {});

struct ToyTransformerParams {
    int tokens = 16;  // token 0 plays the cls role
    int dim = 64;
    int heads = 4;
    int head_dim = 16;
    int hidden = 128;
    int blocks = 4;
    int classes = 8;
    bool head_dim_axis = false;
};
NetworkGraph toy_transformer(const ToyTransformerParams& params = {});

// Lookup by CLI name: resnet50, mobilenet-v1, deit-base, deit-base-headdim,
// toy-cnn, toy-cnn-residual, toy-transformer, toy-transformer-headdim.
NetworkGraph builtin(const std::string& name);
std::vector<std::string> builtin_names();

// Random He-style weights for any graph: kernels ~ N(0, sqrt(2/fan_in)),
// biases zero, batchnorm/layernorm start as identity transforms.
WeightStore init_weights(const NetworkGraph& graph, RngStream rng);

}  // namespace evoprune::models
