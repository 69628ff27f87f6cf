#include "tryon/attention.hpp"

#include <cmath>

#include "tryon/ops.hpp"

namespace tryon {

AttentionWeights AttentionWeights::init(int d, int heads, Rng& rng, DType dt, bool zero_out_proj) {
  if (d % heads != 0) throw ConfigError("attention: d must be divisible by heads");
  AttentionWeights w;
  w.heads = heads;
  const double std = 1.0 / std::sqrt(static_cast<double>(d));
  w.Wq = Tensor::randn({d, d}, rng, dt, std).set_requires_grad(true);
  w.Wk = Tensor::randn({d, d}, rng, dt, std).set_requires_grad(true);
  w.Wv = Tensor::randn({d, d}, rng, dt, std).set_requires_grad(true);
  w.Wo = zero_out_proj ? Tensor::zeros({d, d}, dt, true)
                       : Tensor::randn({d, d}, rng, dt, std).set_requires_grad(true);
  w.bq = Tensor::zeros({d}, dt, true);
  w.bk = Tensor::zeros({d}, dt, true);
  w.bv = Tensor::zeros({d}, dt, true);
  w.bo = Tensor::zeros({d}, dt, true);
  return w;
}

Tensor sdpa(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask,
            const Tensor& Wo, const Tensor& bo, int heads) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
    throw ShapeError("sdpa: expected rank-3 q/k/v");
  const int64_t B = q.dim(0), Sq = q.dim(1), d = q.dim(2);
  const int64_t Bk = k.dim(0), Sk = k.dim(1);
  if (k.shape() != v.shape()) throw ShapeError("sdpa: k and v shapes disagree");
  if (k.dim(2) != d) throw ShapeError("sdpa: key dim mismatch");
  if (Bk != B && Bk != 1) throw ShapeError("sdpa: key batch must equal query batch or 1");
  if (d % heads != 0) throw ShapeError("sdpa: d must be divisible by heads");
  const int64_t dh = d / heads;

  // [B,S,d] -> [B,heads,S,dh]
  auto split = [&](const Tensor& x, int64_t b, int64_t slen) {
    return permute(reshape(x, {b, slen, heads, dh}), {0, 2, 1, 3});
  };
  Tensor qh = split(q, B, Sq);
  Tensor kh = split(k, Bk, Sk);
  Tensor vh = split(v, Bk, Sk);

  Tensor scores;
  {
    ScoreFlopScope scope;
    scores = matmul(qh, transpose_last2(kh));  // [B,heads,Sq,Sk]
  }
  scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor attn;
  if (mask) {
    if (mask->rank() != 3 || (mask->dim(0) != B && mask->dim(0) != 1) || mask->dim(1) != Sq ||
        mask->dim(2) != Sk)
      throw ShapeError("sdpa: mask must be [B or 1, Sq, Sk]");
    Tensor m4 = reshape(*mask, {mask->dim(0), 1, Sq, Sk});
    attn = softmax_lastdim(scores, &m4);
  } else {
    attn = softmax_lastdim(scores);
  }

  Tensor mixed;
  {
    ScoreFlopScope scope;
    mixed = matmul(attn, vh);  // [B,heads,Sq,dh]
  }
  Tensor merged = reshape(permute(mixed, {0, 2, 1, 3}), {B, Sq, d});
  return linear(merged, Wo, bo);
}

Tensor attend(const AttentionWeights& w, const Tensor& x_q, const Tensor& x_kv,
              const Tensor* mask) {
  Tensor q = linear(x_q, w.Wq, w.bq);
  Tensor k = linear(x_kv, w.Wk, w.bk);
  Tensor v = linear(x_kv, w.Wv, w.bv);
  return sdpa(q, k, v, mask, w.Wo, w.bo, w.heads);
}

Tensor spatial_attention(const Tensor& r, const AttentionWeights& w) {
  if (r.rank() != 3) throw ShapeError("spatial_attention: expected [f,s,d]");
  return attend(w, r, r);
}

Tensor temporal_attention(const Tensor& r, const AttentionWeights& w) {
  if (r.rank() != 3) throw ShapeError("temporal_attention: expected [f,s,d]");
  Tensor rt = permute(r, {1, 0, 2});  // [s,f,d]
  Tensor out = attend(w, rt, rt);
  return permute(out, {1, 0, 2});
}

Tensor full_3d_attention(const Tensor& r, const AttentionWeights& w) {
  if (r.rank() != 3) throw ShapeError("full_3d_attention: expected [f,s,d]");
  const int64_t f = r.dim(0), s = r.dim(1), d = r.dim(2);
  Tensor flat = reshape(r, {1, f * s, d});
  Tensor out = attend(w, flat, flat);
  return reshape(out, {f, s, d});
}

}  // namespace tryon
