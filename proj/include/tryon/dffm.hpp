#pragma once

#include <filesystem>
#include <map>

#include "tryon/attention.hpp"

namespace tryon {

struct NormWeights {
  Tensor gain, bias;
  static NormWeights init(int d, DType dt);
};

// Per-block garment features, written once during the garment pass and
// read-only afterwards. One entry per DiT block, each [1,s,d].
class FeatureBank {
 public:
  void put(int block_index, Tensor feature);
  void seal();
  bool sealed() const { return sealed_; }
  int size() const { return static_cast<int>(entries_.size()); }
  const Tensor& entry(int block_index) const;

  // one DTEN file per block for inspection
  void save(const std::filesystem::path& dir) const;

 private:
  std::map<int, Tensor> entries_;
  bool sealed_ = false;
};

// Garment fusion weights for one block: pre-norm on the queries plus a
// cross-attention whose output projection starts at zero, so fusion is an
// exact identity until trained.
struct DffmWeights {
  NormWeights norm;
  AttentionWeights attn;
  static DffmWeights init(int d, int heads, Rng& rng, DType dt);
};

// r_p + CrossAttn(norm(r_p), bank entry). The garment entry [1,s,d] serves
// all f frames through stride-zero batch broadcast; no f-fold copy is made.
Tensor dffm_fuse(const Tensor& r_p, const Tensor& bank_entry, const DffmWeights& w,
                 double eps = 1e-5);

// number of parameters one block of fusion adds
int64_t dffm_params_per_block(int d);

struct Denoiser;

// Runs the backbone in garment mode (spatial attention and MLP only, no
// noise, timestep 0, no conditioning) and returns the sealed bank. Counted
// so callers can assert how often the extraction ran.
FeatureBank extract_garment_features(const Denoiser& model, const Tensor& garment_latent);
uint64_t garment_extract_call_count();

}  // namespace tryon
