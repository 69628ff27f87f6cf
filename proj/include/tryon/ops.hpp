#pragma once

#include "tryon/tensor.hpp"

namespace tryon {

// Additive mask value that hard-blocks an attention logit. softmax_lastdim
// treats anything at or below kMaskBlockThreshold as excluded rather than
// merely improbable, so fully blocked rows come out exactly zero.
inline constexpr double kMaskBlocked = -1e9;
inline constexpr double kMaskBlockThreshold = -1e8;

// Elementwise with right-aligned broadcasting (sizes equal or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

// Batched matrix product. Trailing two dims are [m,k]x[k,p]; leading dims
// broadcast, a size-1 batch walks with stride zero (no materialized copy).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose_last2(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_lastdim(const Tensor& x, int64_t offset, int64_t size);
Tensor concat_lastdim(const std::vector<Tensor>& parts);

// Row gather/scatter over a [rows, width] tensor; index -1 reads/writes a
// zero row. scatter_add_rows starts from `base` and accumulates in the given
// index order (deterministic for overlapping targets).
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx);
Tensor scatter_add_rows(const Tensor& base, const Tensor& contrib,
                        const std::vector<int64_t>& idx);

// Numerically stabilized softmax over the last dim. The optional additive
// mask broadcasts against x; entries <= kMaskBlockThreshold are hard blocks
// and fully blocked rows return zeros.
Tensor softmax_lastdim(const Tensor& x, const Tensor* additive_mask = nullptr);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// tanh-approximation GELU (inner cubic constant 0.044715)
Tensor gelu(const Tensor& x);

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

}  // namespace tryon
