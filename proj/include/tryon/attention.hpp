#pragma once

#include "tryon/tensor.hpp"

namespace tryon {

struct AttentionWeights {
  Tensor Wq, bq, Wk, bk, Wv, bv, Wo, bo;
  int heads = 4;

  // zero_out_proj makes the module an exact no-op contributor at init.
  static AttentionWeights init(int d, int heads, Rng& rng, DType dt, bool zero_out_proj = false);
};

// Head-split scaled dot-product attention over already-projected q/k/v
// [B,Sq,d] / [Bk,Sk,d] with Bk in {B,1}; a size-1 key batch is broadcast
// logically. The optional additive mask is [B or 1, Sq, Sk]. Output is the
// concatenated heads passed through the output projection. The score and
// value matmuls run inside a ScoreFlopScope.
Tensor sdpa(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask,
            const Tensor& Wo, const Tensor& bo, int heads);

// Projects x_q / x_kv through the weights and runs sdpa.
Tensor attend(const AttentionWeights& w, const Tensor& x_q, const Tensor& x_kv,
              const Tensor* mask = nullptr);

// Table-style layout variants over r [f,s,d].
Tensor spatial_attention(const Tensor& r, const AttentionWeights& w);   // within each frame
Tensor temporal_attention(const Tensor& r, const AttentionWeights& w);  // across frames per token
Tensor full_3d_attention(const Tensor& r, const AttentionWeights& w);   // joint f*s sequence

}  // namespace tryon
