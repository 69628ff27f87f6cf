#pragma once

#include "tryon/attention.hpp"
#include "tryon/dffm.hpp"
#include "tryon/pose.hpp"

namespace tryon {

// Limb refinement weights: pre-norm, masked self-attention, and a final
// linear projection that is exactly zero at construction so the module
// contributes nothing until trained.
struct LdamWeights {
  NormWeights norm;
  AttentionWeights attn;
  Tensor proj_W, proj_b;
  static LdamWeights init(int d, int heads, Rng& rng, DType dt);
};

// r_p [f,s,d] -> r_l [L,n,d]: slot j of limb l holds the feature at
// indices[l][j]; slots past counts[l] are zero.
Tensor gather_pad(const Tensor& r_p, const LimbGather& g);

// Masked self-attention per limb over [L,n,d]; padded rows come out zero
// both as queries and keys.
Tensor limb_attention(const Tensor& r_l, const Tensor& mask, const AttentionWeights& w);

// r_p with the projected limb contributions added back at their source
// tokens; a token in several limbs receives every limb's contribution.
Tensor ldam_scatter_add(const Tensor& r_p, const Tensor& contrib, const LimbGather& g);

// norm -> gather -> masked attention -> zero-init projection -> scatter-add,
// residual on r_p. Tokens outside all limbs are returned untouched.
Tensor ldam_forward(const Tensor& r_p, const LimbGather& g, const LdamWeights& w,
                    double eps = 1e-5);

int64_t ldam_params_per_block(int d);

}  // namespace tryon
