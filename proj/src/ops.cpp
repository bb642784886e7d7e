#include "evoprune/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace evoprune::ops {

namespace {

using VecD = Eigen::VectorXd;

MatrixD to_double(const Tensor& t, std::int64_t rows, std::int64_t cols) {
    return t.as_matrix(rows, cols).cast<double>();
}

Tensor from_double(const MatrixD& m) {
    Tensor out({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    out.mat() = m.cast<float>();
    return out;
}

}  // namespace

void require_finite(const Tensor& t, const char* what) {
    for (std::int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(t[i]))
            throw NumericError(std::string(what) + ": non-finite value at flat index " +
                               std::to_string(i));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul: expected rank-2 operands, got " + a.shape_string() + " and " +
                             b.shape_string());
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner dimensions differ, " + a.shape_string() + " vs " +
                             b.shape_string());
    MatrixD prod = a.mat().cast<double>() * b.mat().cast<double>();
    return from_double(prod);
}

Tensor im2col(const Tensor& input, int k1, int k2, int stride, int padding) {
    if (input.rank() != 4)
        throw DimensionError("im2col: expected [N x C x H x W] input, got " + input.shape_string());
    if (stride < 1 || padding < 0 || k1 < 1 || k2 < 1)
        throw DimensionError("im2col: bad kernel/stride/padding");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int oh = conv_out_extent(h, k1, stride, padding);
    const int ow = conv_out_extent(w, k2, stride, padding);
    if (oh < 1 || ow < 1)
        throw DimensionError("im2col: kernel does not fit input " + input.shape_string());

    Tensor col({n * oh * ow, c * k1 * k2});
    float* out = col.data();
    const float* in = input.data();
    const std::int64_t chw = static_cast<std::int64_t>(c) * h * w;
    const std::int64_t cols = static_cast<std::int64_t>(c) * k1 * k2;
    for (int img = 0; img < n; ++img) {
        const float* base = in + img * chw;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                float* row = out + (static_cast<std::int64_t>(img) * oh * ow + oy * ow + ox) * cols;
                for (int ch = 0; ch < c; ++ch) {
                    const float* plane = base + static_cast<std::int64_t>(ch) * h * w;
                    for (int ky = 0; ky < k1; ++ky) {
                        const int y = oy * stride + ky - padding;
                        for (int kx = 0; kx < k2; ++kx) {
                            const int x = ox * stride + kx - padding;
                            *row++ = (y < 0 || y >= h || x < 0 || x >= w)
                                         ? 0.0f
                                         : plane[static_cast<std::int64_t>(y) * w + x];
                        }
                    }
                }
            }
        }
    }
    return col;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, int stride, int padding,
                      int groups, const Tensor* bias) {
    if (input.rank() != 4 || kernel.rank() != 4)
        throw DimensionError("conv2d: expected rank-4 input and kernel, got " +
                             input.shape_string() + " and " + kernel.shape_string());
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = kernel.dim(0), kc = kernel.dim(1), k1 = kernel.dim(2), k2 = kernel.dim(3);
    if (groups < 1 || cin % groups != 0 || cout % groups != 0)
        throw DimensionError("conv2d: groups " + std::to_string(groups) +
                             " does not divide channels");
    if (kc != cin / groups)
        throw DimensionError("conv2d: kernel " + kernel.shape_string() + " incompatible with " +
                             std::to_string(cin) + " input channels / " + std::to_string(groups) +
                             " groups");
    const int oh = conv_out_extent(h, k1, stride, padding);
    const int ow = conv_out_extent(w, k2, stride, padding);
    if (oh < 1 || ow < 1)
        throw DimensionError("conv2d: kernel does not fit input " + input.shape_string());
    if (bias && !bias->empty() && (bias->rank() != 1 || bias->dim(0) != cout))
        throw DimensionError("conv2d: bias shape mismatch");

    Tensor out({n, cout, oh, ow});
    const int cg = cin / groups;
    const int og = cout / groups;
    const std::int64_t plane = static_cast<std::int64_t>(oh) * ow;

    for (int g = 0; g < groups; ++g) {
        // Slice the input channels of this group into a contiguous tensor.
        Tensor sub({n, cg, h, w});
        {
            const std::int64_t hw = static_cast<std::int64_t>(h) * w;
            for (int img = 0; img < n; ++img)
                for (int ch = 0; ch < cg; ++ch) {
                    const float* src = input.data() +
                                       ((static_cast<std::int64_t>(img) * cin) + g * cg + ch) * hw;
                    float* dst = sub.data() + ((static_cast<std::int64_t>(img) * cg) + ch) * hw;
                    std::copy(src, src + hw, dst);
                }
        }
        Tensor col = im2col(sub, k1, k2, stride, padding);
        CMapMatF kmat(kernel.data() + static_cast<std::int64_t>(g) * og * cg * k1 * k2, og,
                      cg * k1 * k2);
        // [(N*oh*ow) x og] in double accumulation.
        MatrixD prod = col.mat().cast<double>() * kmat.cast<double>().transpose();
        for (int img = 0; img < n; ++img)
            for (int oc = 0; oc < og; ++oc) {
                float* dst = out.data() +
                             ((static_cast<std::int64_t>(img) * cout) + g * og + oc) * plane;
                const double b = (bias && !bias->empty())
                                     ? static_cast<double>((*bias)[g * og + oc])
                                     : 0.0;
                for (std::int64_t p = 0; p < plane; ++p)
                    dst[p] = static_cast<float>(prod(img * plane + p, oc) + b);
            }
    }
    return out;
}

Tensor least_squares_solve(const Tensor& a, const Tensor& b, LeastSquaresInfo* info) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("least_squares_solve: expected rank-2 operands");
    const int m = a.dim(0), k = a.dim(1), nrhs = b.dim(1);
    if (b.dim(0) != m)
        throw DimensionError("least_squares_solve: row counts differ, " + a.shape_string() +
                             " vs " + b.shape_string());
    require_finite(a, "least_squares_solve design matrix");
    require_finite(b, "least_squares_solve targets");

    MatrixD ad = to_double(a, m, k);
    MatrixD bd = to_double(b, m, nrhs);

    LeastSquaresInfo local;
    MatrixD w;
    bool rank_deficient = m < k;
    if (!rank_deficient) {
        Eigen::HouseholderQR<MatrixD> qr(ad);
        const MatrixD r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
        double dmax = 0.0;
        for (int i = 0; i < k; ++i) dmax = std::max(dmax, std::abs(r(i, i)));
        const double dtol = dmax * k * std::numeric_limits<double>::epsilon() * 16;
        for (int i = 0; i < k; ++i)
            if (std::abs(r(i, i)) <= dtol) {
                rank_deficient = true;
                break;
            }
        if (!rank_deficient) w = qr.solve(bd);
    }
    if (rank_deficient) {
        MatrixD gram = ad.transpose() * ad;
        local.lambda = 1e-8 * gram.trace() / static_cast<double>(k);
        if (local.lambda <= 0.0) local.lambda = 1e-30;
        gram.diagonal().array() += local.lambda;
        local.ridge_used = true;
        w = gram.ldlt().solve(ad.transpose() * bd);
    }
    if (info) *info = local;
    return from_double(w);
}

Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor* bias) {
    if (weight.rank() != 2) throw DimensionError("dense: weight must be rank 2");
    const int out_f = weight.dim(0), in_f = weight.dim(1);
    if (x.rank() != 2 && x.rank() != 3)
        throw DimensionError("dense: input must be rank 2 or 3, got " + x.shape_string());
    const int feat = x.dim(x.rank() - 1);
    if (feat != in_f)
        throw DimensionError("dense: input features " + std::to_string(feat) +
                             " do not match weight " + weight.shape_string());
    if (bias && !bias->empty() && (bias->rank() != 1 || bias->dim(0) != out_f))
        throw DimensionError("dense: bias shape mismatch");

    const std::int64_t rows = x.numel() / feat;
    MatrixD y = x.as_matrix(rows, feat).cast<double>() * weight.mat().cast<double>().transpose();
    if (bias && !bias->empty())
        y.rowwise() += bias->as_matrix(1, out_f).cast<double>().row(0);

    std::vector<int> shape = x.shape();
    shape.back() = out_f;
    Tensor out(shape);
    out.as_matrix(rows, out_f) = y.cast<float>();
    return out;
}

Tensor attention_forward(const Tensor& tokens, const Tensor& qkv_weight, const Tensor* qkv_bias,
                         const Tensor& proj_weight, const Tensor* proj_bias, int head_count,
                         int head_dim, Tensor* head_concat_out) {
    if (tokens.rank() != 3)
        throw DimensionError("attention: tokens must be [N x T x D], got " + tokens.shape_string());
    const int n = tokens.dim(0), t = tokens.dim(1), d = tokens.dim(2);
    const int hd = head_count * head_dim;
    if (head_count < 1 || head_dim < 1)
        throw DimensionError("attention: head_count and head_dim must be positive");
    if (qkv_weight.rank() != 2 || qkv_weight.dim(0) != 3 * hd || qkv_weight.dim(1) != d)
        throw DimensionError("attention: qkv weight " + qkv_weight.shape_string() +
                             " inconsistent with head_count=" + std::to_string(head_count) +
                             " head_dim=" + std::to_string(head_dim) + " D=" + std::to_string(d));
    if (proj_weight.rank() != 2 || proj_weight.dim(0) != d || proj_weight.dim(1) != hd)
        throw DimensionError("attention: proj weight " + proj_weight.shape_string() +
                             " inconsistent with heads");

    Tensor qkv = dense_forward(tokens, qkv_weight, qkv_bias);  // [N x T x 3*H*Dh]
    Tensor concat({n, t, hd});
    const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

    MatrixF q(t, head_dim), kmat(t, head_dim), v(t, head_dim);
    for (int img = 0; img < n; ++img) {
        CMapMatF qkv_img(qkv.data() + static_cast<std::int64_t>(img) * t * 3 * hd, t, 3 * hd);
        MapMatF concat_img(concat.data() + static_cast<std::int64_t>(img) * t * hd, t, hd);
        for (int h = 0; h < head_count; ++h) {
            q = qkv_img.middleCols(h * head_dim, head_dim);
            kmat = qkv_img.middleCols(hd + h * head_dim, head_dim);
            v = qkv_img.middleCols(2 * hd + h * head_dim, head_dim);
            MatrixD scores =
                (q.cast<double>() * kmat.cast<double>().transpose()) * static_cast<double>(scale);
            // Row-wise softmax over keys.
            for (int row = 0; row < t; ++row) {
                double mx = scores.row(row).maxCoeff();
                VecD e = (scores.row(row).array() - mx).exp();
                scores.row(row) = (e / e.sum()).transpose();
            }
            concat_img.middleCols(h * head_dim, head_dim) =
                (scores * v.cast<double>()).cast<float>();
        }
    }
    if (head_concat_out) *head_concat_out = concat;
    return dense_forward(concat, proj_weight, proj_bias);
}

Tensor batchnorm_inference_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                   const Tensor& mean, const Tensor& var, float eps) {
    if (x.rank() != 4 && x.rank() != 2)
        throw DimensionError("batchnorm: input must be [N x C x H x W] or [N x C]");
    const int c = x.dim(1);
    for (const Tensor* p : {&gamma, &beta, &mean, &var})
        if (p->rank() != 1 || p->dim(0) != c)
            throw DimensionError("batchnorm: parameter shape does not match " +
                                 std::to_string(c) + " channels");
    Tensor out(x.shape());
    const std::int64_t plane = x.rank() == 4 ? static_cast<std::int64_t>(x.dim(2)) * x.dim(3) : 1;
    const int n = x.dim(0);
    for (int ch = 0; ch < c; ++ch) {
        const float inv = 1.0f / std::sqrt(var[ch] + eps);
        const float g = gamma[ch] * inv;
        const float b = beta[ch] - mean[ch] * g;
        for (int img = 0; img < n; ++img) {
            const float* src = x.data() + (static_cast<std::int64_t>(img) * c + ch) * plane;
            float* dst = out.data() + (static_cast<std::int64_t>(img) * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * g + b;
        }
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    constexpr float inv_sqrt2 = 0.7071067811865475f;
    for (std::int64_t i = 0; i < x.numel(); ++i)
        out[i] = 0.5f * x[i] * (1.0f + std::erf(x[i] * inv_sqrt2));
    return out;
}

Tensor layernorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    const int feat = x.dim(x.rank() - 1);
    if (gamma.rank() != 1 || gamma.dim(0) != feat || beta.rank() != 1 || beta.dim(0) != feat)
        throw DimensionError("layernorm: parameter shapes do not match " + std::to_string(feat) +
                             " features");
    Tensor out(x.shape());
    const std::int64_t rows = x.numel() / feat;
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* src = x.data() + r * feat;
        float* dst = out.data() + r * feat;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < feat; ++i) sum += src[i];
        const double mu = sum / feat;
        for (int i = 0; i < feat; ++i) {
            const double d = src[i] - mu;
            sq += d * d;
        }
        const double inv = 1.0 / std::sqrt(sq / feat + eps);
        for (int i = 0; i < feat; ++i)
            dst[i] = static_cast<float>((src[i] - mu) * inv) * gamma[i] + beta[i];
    }
    return out;
}

Tensor softmax(const Tensor& x) {
    const int feat = x.dim(x.rank() - 1);
    Tensor out(x.shape());
    const std::int64_t rows = x.numel() / feat;
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* src = x.data() + r * feat;
        float* dst = out.data() + r * feat;
        float mx = src[0];
        for (int i = 1; i < feat; ++i) mx = std::max(mx, src[i]);
        double sum = 0.0;
        for (int i = 0; i < feat; ++i) {
            const double e = std::exp(static_cast<double>(src[i] - mx));
            dst[i] = static_cast<float>(e);
            sum += e;
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (int i = 0; i < feat; ++i) dst[i] *= inv;
    }
    return out;
}

Tensor global_average_pool(const Tensor& x) {
    if (x.rank() != 4) throw DimensionError("global_average_pool: expected [N x C x H x W]");
    const int n = x.dim(0), c = x.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    Tensor out({n, c});
    for (int img = 0; img < n; ++img)
        for (int ch = 0; ch < c; ++ch) {
            const float* src = x.data() + (static_cast<std::int64_t>(img) * c + ch) * plane;
            double sum = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
            out[static_cast<std::int64_t>(img) * c + ch] = static_cast<float>(sum / plane);
        }
    return out;
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding) {
    if (x.rank() != 4) throw DimensionError("max_pool2d: expected [N x C x H x W]");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = conv_out_extent(h, kernel, stride, padding);
    const int ow = conv_out_extent(w, kernel, stride, padding);
    if (oh < 1 || ow < 1) throw DimensionError("max_pool2d: kernel does not fit input");
    Tensor out({n, c, oh, ow});
    for (int img = 0; img < n; ++img)
        for (int ch = 0; ch < c; ++ch) {
            const float* plane = x.data() + (static_cast<std::int64_t>(img) * c + ch) * h * w;
            float* dst = out.data() + (static_cast<std::int64_t>(img) * c + ch) * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    float best = -std::numeric_limits<float>::infinity();
                    for (int ky = 0; ky < kernel; ++ky) {
                        const int y = oy * stride + ky - padding;
                        if (y < 0 || y >= h) continue;
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int xpos = ox * stride + kx - padding;
                            if (xpos < 0 || xpos >= w) continue;
                            best = std::max(best, plane[static_cast<std::int64_t>(y) * w + xpos]);
                        }
                    }
                    dst[static_cast<std::int64_t>(oy) * ow + ox] = best;
                }
        }
    return out;
}

std::vector<int> argmax_classify(const Tensor& logits) {
    if (logits.rank() != 2) throw DimensionError("argmax_classify: expected [N x classes]");
    const int n = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float* row = logits.data() + static_cast<std::int64_t>(i) * c;
        int best = 0;
        for (int j = 1; j < c; ++j)
            if (row[j] > row[best]) best = j;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

}  // namespace evoprune::ops
