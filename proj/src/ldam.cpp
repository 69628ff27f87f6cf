#include "tryon/ldam.hpp"

#include "tryon/ops.hpp"

namespace tryon {

LdamWeights LdamWeights::init(int d, int heads, Rng& rng, DType dt) {
  LdamWeights w;
  w.norm = NormWeights::init(d, dt);
  w.attn = AttentionWeights::init(d, heads, rng, dt);
  w.proj_W = Tensor::zeros({d, d}, dt, true);
  w.proj_b = Tensor::zeros({d}, dt, true);
  return w;
}

Tensor gather_pad(const Tensor& r_p, const LimbGather& g) {
  if (r_p.rank() != 3) throw ShapeError("gather_pad: expected [f,s,d]");
  if (r_p.dim(0) != g.f || r_p.dim(1) != g.s)
    throw ContractError("gather_pad: gather tables built for a different (f,s)");
  const int64_t d = r_p.dim(2);
  Tensor rows = reshape(r_p, {static_cast<int64_t>(g.f) * g.s, d});
  Tensor gathered = gather_rows(rows, g.flat_index_table());
  return reshape(gathered, {g.L, g.n, d});
}

Tensor limb_attention(const Tensor& r_l, const Tensor& mask, const AttentionWeights& w) {
  if (r_l.rank() != 3) throw ShapeError("limb_attention: expected [L,n,d]");
  if (mask.rank() != 3 || mask.dim(0) != r_l.dim(0) || mask.dim(1) != r_l.dim(1) ||
      mask.dim(2) != r_l.dim(1))
    throw ShapeError("limb_attention: mask must be [L,n,n]");
  return attend(w, r_l, r_l, &mask);
}

Tensor ldam_scatter_add(const Tensor& r_p, const Tensor& contrib, const LimbGather& g) {
  if (r_p.rank() != 3 || contrib.rank() != 3) throw ShapeError("ldam_scatter_add: rank mismatch");
  if (contrib.dim(0) != g.L || contrib.dim(1) != g.n || contrib.dim(2) != r_p.dim(2))
    throw ShapeError("ldam_scatter_add: contribution must be [L,n,d]");
  const int64_t d = r_p.dim(2);
  Tensor base = reshape(r_p, {static_cast<int64_t>(g.f) * g.s, d});
  Tensor flat = reshape(contrib, {static_cast<int64_t>(g.L) * g.n, d});
  Tensor out = scatter_add_rows(base, flat, g.flat_index_table());
  return reshape(out, r_p.shape());
}

Tensor ldam_forward(const Tensor& r_p, const LimbGather& g, const LdamWeights& w, double eps) {
  Tensor normed = layer_norm(r_p, w.norm.gain, w.norm.bias, eps);
  Tensor r_l = gather_pad(normed, g);
  Tensor refined = limb_attention(r_l, g.attention_mask(r_p.dtype()), w.attn);
  Tensor projected = linear(refined, w.proj_W, w.proj_b);
  return ldam_scatter_add(r_p, projected, g);
}

int64_t ldam_params_per_block(int d) {
  const int64_t dd = static_cast<int64_t>(d);
  return 4 * dd * dd + 4 * dd  // attention projections and biases
         + dd * dd + dd        // zero-init output projection
         + 2 * dd;             // pre-norm
}

}  // namespace tryon
