#pragma once

#include <vector>

#include "evoprune/tensor.hpp"

namespace evoprune::ops {

// Numerical kernels over tensors. All functions are pure: identical inputs
// give bitwise-identical outputs within a platform, and no function mutates
// its arguments, so concurrent calls from many threads are safe.
//
// Matrix products accumulate in 64-bit floats and round the result back to
// 32-bit storage.

// [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Unrolls conv windows of an [N x C x H x W] input into a
// [(N*H'*W') x (C*K1*K2)] patch matrix. Column order is channel-major:
// channel c occupies columns [c*K1*K2, (c+1)*K1*K2).
Tensor im2col(const Tensor& input, int k1, int k2, int stride, int padding);

inline int conv_out_extent(int in, int k, int stride, int padding) {
    return (in + 2 * padding - k) / stride + 1;
}

// Cross-correlation (no kernel flip), via im2col + matmul.
// input [N x Cin x H x W], kernel [Cout x Cin/groups x K1 x K2].
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, int stride, int padding,
                      int groups = 1, const Tensor* bias = nullptr);

struct LeastSquaresInfo {
    bool ridge_used = false;
    double lambda = 0.0;
};

// Minimizes ||a*W - b||_F over W [k x n] for a [m x k], b [m x n].
// Householder QR of the design matrix; when R is rank-deficient, falls back
// to normal equations with ridge lambda = 1e-8 * trace(a^T a) / k.
Tensor least_squares_solve(const Tensor& a, const Tensor& b, LeastSquaresInfo* info = nullptr);

// y = x * W^T (+ bias). x may be rank 2 [N x in] or rank 3 [N x T x in];
// weight is [out x in], bias [out].
Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor* bias = nullptr);

// Scaled dot-product multi-head attention over tokens [N x T x D].
// qkv_weight is [(3*H*Dh) x D], rows ordered Q then K then V, head-major
// within each section; proj_weight is [D x (H*Dh)] with head-major columns.
// When head_concat_out is non-null it receives the pre-projection
// concatenated head outputs [N x T x (H*Dh)].
Tensor attention_forward(const Tensor& tokens, const Tensor& qkv_weight, const Tensor* qkv_bias,
                         const Tensor& proj_weight, const Tensor* proj_bias, int head_count,
                         int head_dim, Tensor* head_concat_out = nullptr);

// Per-channel affine with stored statistics; x is [N x C x H x W] or [N x C].
Tensor batchnorm_inference_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                   const Tensor& mean, const Tensor& var, float eps = 1e-5f);

Tensor relu(const Tensor& x);

// Exact erf form: 0.5 * x * (1 + erf(x / sqrt(2))).
Tensor gelu(const Tensor& x);

// Normalizes over the last dimension with per-feature gamma/beta.
Tensor layernorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         float eps = 1e-5f);

// Softmax over the last dimension.
Tensor softmax(const Tensor& x);

// [N x C x H x W] -> [N x C].
Tensor global_average_pool(const Tensor& x);

// Spatial max pooling, [N x C x H x W] -> [N x C x H' x W'].
Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding);

// Row-wise argmax of logits [N x classes]; ties go to the lower index.
std::vector<int> argmax_classify(const Tensor& logits);

void require_finite(const Tensor& t, const char* what);

}  // namespace evoprune::ops
