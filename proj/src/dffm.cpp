#include "tryon/dffm.hpp"

#include "tryon/io.hpp"
#include "tryon/ops.hpp"

namespace tryon {

NormWeights NormWeights::init(int d, DType dt) {
  NormWeights n;
  n.gain = Tensor::full({d}, 1.0, dt).set_requires_grad(true);
  n.bias = Tensor::zeros({d}, dt, true);
  return n;
}

void FeatureBank::put(int block_index, Tensor feature) {
  if (sealed_) throw StateError("feature bank: write after seal");
  if (feature.rank() != 3 || feature.dim(0) != 1)
    throw ShapeError("feature bank: entries must be [1,s,d]");
  if (!entries_.empty()) {
    const auto& first = entries_.begin()->second;
    if (feature.shape() != first.shape())
      throw ShapeError("feature bank: entry shape mismatch");
  }
  if (entries_.count(block_index)) throw StateError("feature bank: duplicate block entry");
  entries_.emplace(block_index, std::move(feature));
}

void FeatureBank::seal() {
  if (sealed_) throw StateError("feature bank: already sealed");
  sealed_ = true;
}

const Tensor& FeatureBank::entry(int block_index) const {
  if (!sealed_) throw StateError("feature bank: read before seal");
  auto it = entries_.find(block_index);
  if (it == entries_.end())
    throw StateError("feature bank: no entry for block " + std::to_string(block_index));
  return it->second;
}

void FeatureBank::save(const std::filesystem::path& dir) const {
  if (!sealed_) throw StateError("feature bank: save before seal");
  for (const auto& [idx, t] : entries_)
    save_dten(dir / ("bank_block_" + std::to_string(idx) + ".dten"), t);
}

DffmWeights DffmWeights::init(int d, int heads, Rng& rng, DType dt) {
  DffmWeights w;
  w.norm = NormWeights::init(d, dt);
  w.attn = AttentionWeights::init(d, heads, rng, dt, /*zero_out_proj=*/true);
  return w;
}

Tensor dffm_fuse(const Tensor& r_p, const Tensor& bank_entry, const DffmWeights& w, double eps) {
  if (r_p.rank() != 3 || bank_entry.rank() != 3 || bank_entry.dim(0) != 1)
    throw ShapeError("dffm_fuse: expected r_p [f,s,d] and entry [1,s,d]");
  if (bank_entry.dim(2) != r_p.dim(2)) throw ShapeError("dffm_fuse: hidden dims disagree");
  Tensor q = layer_norm(r_p, w.norm.gain, w.norm.bias, eps);
  // queries come from the denoising stream, keys/values from the garment
  Tensor fused = attend(w.attn, q, bank_entry);
  return add(r_p, fused);
}

int64_t dffm_params_per_block(int d) {
  const int64_t dd = static_cast<int64_t>(d);
  return 4 * dd * dd + 4 * dd  // cross-attention projections and biases
         + 2 * dd;             // pre-norm gain/bias
}

}  // namespace tryon
