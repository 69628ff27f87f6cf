#pragma once

#include "tryon/dffm.hpp"
#include "tryon/ldam.hpp"
#include "tryon/tokenizer.hpp"

namespace tryon {

struct MlpWeights {
  Tensor W1, b1, W2, b2;  // d -> 4d -> d with GELU
  static MlpWeights init(int d, Rng& rng, DType dt);
};

// Timestep-conditioned modulation: GELU on the step embedding followed by a
// zero-initialized linear producing `chunks` shift/scale/gate vectors, so
// every gated sublayer starts as an exact identity.
struct AdaWeights {
  Tensor W, b;
  int chunks = 0;
  static AdaWeights init(int d, int chunks, DType dt);
};

struct StDitBlock {
  NormWeights norm_spatial, norm_temporal, norm_mlp;
  AttentionWeights spatial, temporal;
  DffmWeights dffm;
  bool has_ldam = false;
  LdamWeights ldam;
  MlpWeights mlp;
  AdaWeights ada;  // 9 chunks: shift/scale/gate for spatial, temporal, mlp
  static StDitBlock init(const ModelConfig& cfg, bool with_ldam, Rng& rng);
};

struct ConditioningInputs {
  Tensor x_a;      // agnostic latent [f,h,w,cz]
  Tensor m_c;      // inpaint mask [f,h,w,1], values in {0,1}
  Tensor pose_map; // skeleton render [f,h,w,1]
  void validate(const ModelConfig& cfg) const;
};

// Structural replica of a backbone block with its own input projection for
// the conditioning channels and a zero-initialized output gate.
struct ConditioningBlock {
  Tensor in_W, in_b;
  NormWeights norm_spatial, norm_temporal, norm_mlp;
  AttentionWeights spatial, temporal;
  MlpWeights mlp;
  AdaWeights ada;
  Tensor gate;  // [d], zero at init
  static ConditioningBlock init(const ModelConfig& cfg, Rng& rng);
};

struct TimestepEmbed {
  Tensor W1, b1, W2, b2;
  static TimestepEmbed init(int d, Rng& rng, DType dt);
};

struct FinalHead {
  NormWeights norm;
  AdaWeights mod;  // 2 chunks: shift/scale
  Tensor W, b;     // d -> p*p*cz
  static FinalHead init(const ModelConfig& cfg, Rng& rng);
};

struct Denoiser {
  ModelConfig cfg;
  Tensor in_W, in_b;  // patch dim -> d
  TimestepEmbed temb;
  ConditioningBlock cond;
  std::vector<StDitBlock> blocks;
  FinalHead head;

  static Denoiser init(const ModelConfig& cfg, uint64_t seed);

  // stable name -> tensor listing; names drive stage freezing, checkpoints
  // and hashing
  std::vector<NamedParam> parameters();
  std::vector<NamedParam> parameters() const;
};

// Sinusoidal frequency embedding of the step index followed by a two-layer
// MLP; returns [1,d].
Tensor timestep_embedding(const TimestepEmbed& temb, int t, int T, int d, DType dt);

// Channel-concatenated conditioning through the replica block; the returned
// residual [f,s,d] is added to block 1's input and is zero while the gate is.
Tensor conditioning_forward(const ConditioningBlock& c, const ModelConfig& cfg,
                            const ConditioningInputs& inputs, const Tensor& t_emb);

// Full denoising pass: predicts the injected noise for z_t at step t.
// `cond` may be null (unconditioned run); `bank` is required when DFFM is
// enabled, `g` when any block runs LDAM.
Tensor denoise(const Denoiser& model, const Tensor& z_t, int t, const ConditioningInputs* cond,
               const FeatureBank* bank, const LimbGather* g);

// Garment mode: spatial attention and MLP only, timestep 0, no noise, no
// conditioning; taps each block's fusion-point feature into the bank.
FeatureBank garment_mode_forward(const Denoiser& model, const Tensor& garment_latent);

}  // namespace tryon
