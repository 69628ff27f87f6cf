#include "tryon/backbone.hpp"

#include <atomic>
#include <cmath>

#include "tryon/ops.hpp"

namespace tryon {

MlpWeights MlpWeights::init(int d, Rng& rng, DType dt) {
  MlpWeights m;
  m.W1 = Tensor::randn({d, 4 * d}, rng, dt, 1.0 / std::sqrt(static_cast<double>(d)))
             .set_requires_grad(true);
  m.b1 = Tensor::zeros({4 * d}, dt, true);
  m.W2 = Tensor::randn({4 * d, d}, rng, dt, 1.0 / std::sqrt(static_cast<double>(4 * d)))
             .set_requires_grad(true);
  m.b2 = Tensor::zeros({d}, dt, true);
  return m;
}

AdaWeights AdaWeights::init(int d, int chunks, DType dt) {
  AdaWeights a;
  a.chunks = chunks;
  a.W = Tensor::zeros({d, chunks * d}, dt, true);
  a.b = Tensor::zeros({chunks * d}, dt, true);
  return a;
}

StDitBlock StDitBlock::init(const ModelConfig& cfg, bool with_ldam, Rng& rng) {
  StDitBlock b;
  const DType dt = cfg.dtype;
  b.norm_spatial = NormWeights::init(cfg.d, dt);
  b.norm_temporal = NormWeights::init(cfg.d, dt);
  b.norm_mlp = NormWeights::init(cfg.d, dt);
  b.spatial = AttentionWeights::init(cfg.d, cfg.heads, rng, dt);
  b.temporal = AttentionWeights::init(cfg.d, cfg.heads, rng, dt);
  b.dffm = DffmWeights::init(cfg.d, cfg.heads, rng, dt);
  b.has_ldam = with_ldam;
  if (with_ldam) b.ldam = LdamWeights::init(cfg.d, cfg.heads, rng, dt);
  b.mlp = MlpWeights::init(cfg.d, rng, dt);
  b.ada = AdaWeights::init(cfg.d, 9, dt);
  return b;
}

void ConditioningInputs::validate(const ModelConfig& cfg) const {
  if (x_a.rank() != 4 || m_c.rank() != 4 || pose_map.rank() != 4)
    throw ConfigError("conditioning: expected rank-4 inputs");
  const int64_t f = x_a.dim(0);
  if (x_a.dim(1) != cfg.h || x_a.dim(2) != cfg.w || x_a.dim(3) != cfg.cz)
    throw ConfigError("conditioning: agnostic latent shape mismatch");
  if (m_c.dim(0) != f || m_c.dim(1) != cfg.h || m_c.dim(2) != cfg.w || m_c.dim(3) != 1)
    throw ConfigError("conditioning: mask shape mismatch");
  if (pose_map.dim(0) != f || pose_map.dim(1) != cfg.h || pose_map.dim(2) != cfg.w ||
      pose_map.dim(3) != 1)
    throw ConfigError("conditioning: pose map shape mismatch");
  const auto& mi = m_c.impl();
  for (int64_t i = 0; i < mi.numel(); ++i) {
    const double v = mi.get(i);
    if (v != 0.0 && v != 1.0) throw ConfigError("conditioning: mask must be binary");
  }
}

ConditioningBlock ConditioningBlock::init(const ModelConfig& cfg, Rng& rng) {
  ConditioningBlock c;
  const DType dt = cfg.dtype;
  const int in_dim = (cfg.cz + 2) * cfg.p * cfg.p;
  c.in_W = Tensor::randn({in_dim, cfg.d}, rng, dt, 1.0 / std::sqrt(static_cast<double>(in_dim)))
               .set_requires_grad(true);
  c.in_b = Tensor::zeros({cfg.d}, dt, true);
  c.norm_spatial = NormWeights::init(cfg.d, dt);
  c.norm_temporal = NormWeights::init(cfg.d, dt);
  c.norm_mlp = NormWeights::init(cfg.d, dt);
  c.spatial = AttentionWeights::init(cfg.d, cfg.heads, rng, dt);
  c.temporal = AttentionWeights::init(cfg.d, cfg.heads, rng, dt);
  c.mlp = MlpWeights::init(cfg.d, rng, dt);
  c.ada = AdaWeights::init(cfg.d, 9, dt);
  c.gate = Tensor::zeros({cfg.d}, dt, true);
  return c;
}

TimestepEmbed TimestepEmbed::init(int d, Rng& rng, DType dt) {
  TimestepEmbed t;
  const double std = 1.0 / std::sqrt(static_cast<double>(d));
  t.W1 = Tensor::randn({d, d}, rng, dt, std).set_requires_grad(true);
  t.b1 = Tensor::zeros({d}, dt, true);
  t.W2 = Tensor::randn({d, d}, rng, dt, std).set_requires_grad(true);
  t.b2 = Tensor::zeros({d}, dt, true);
  return t;
}

FinalHead FinalHead::init(const ModelConfig& cfg, Rng& rng) {
  FinalHead h;
  const DType dt = cfg.dtype;
  h.norm = NormWeights::init(cfg.d, dt);
  h.mod = AdaWeights::init(cfg.d, 2, dt);
  h.W = Tensor::randn({cfg.d, cfg.patch_dim()}, rng, dt,
                      1.0 / std::sqrt(static_cast<double>(cfg.d)))
            .set_requires_grad(true);
  h.b = Tensor::zeros({cfg.patch_dim()}, dt, true);
  return h;
}

Denoiser Denoiser::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Denoiser m;
  m.cfg = cfg;
  Rng rng(Rng::mix(seed, 0x746f6b656eull));
  const DType dt = cfg.dtype;
  m.in_W = Tensor::randn({cfg.patch_dim(), cfg.d}, rng, dt,
                         1.0 / std::sqrt(static_cast<double>(cfg.patch_dim())))
               .set_requires_grad(true);
  m.in_b = Tensor::zeros({cfg.d}, dt, true);
  m.temb = TimestepEmbed::init(cfg.d, rng, dt);
  m.cond = ConditioningBlock::init(cfg, rng);
  for (int i = 0; i < cfg.num_blocks; ++i)
    m.blocks.push_back(StDitBlock::init(cfg, cfg.ldam_enabled(i), rng));
  m.head = FinalHead::init(cfg, rng);
  return m;
}

namespace {

void push_attn(std::vector<NamedParam>& out, const std::string& prefix, AttentionWeights& w) {
  out.push_back({prefix + ".Wq", w.Wq});
  out.push_back({prefix + ".bq", w.bq});
  out.push_back({prefix + ".Wk", w.Wk});
  out.push_back({prefix + ".bk", w.bk});
  out.push_back({prefix + ".Wv", w.Wv});
  out.push_back({prefix + ".bv", w.bv});
  out.push_back({prefix + ".Wo", w.Wo});
  out.push_back({prefix + ".bo", w.bo});
}

void push_norm(std::vector<NamedParam>& out, const std::string& prefix, NormWeights& n) {
  out.push_back({prefix + ".gain", n.gain});
  out.push_back({prefix + ".bias", n.bias});
}

void push_mlp(std::vector<NamedParam>& out, const std::string& prefix, MlpWeights& m) {
  out.push_back({prefix + ".W1", m.W1});
  out.push_back({prefix + ".b1", m.b1});
  out.push_back({prefix + ".W2", m.W2});
  out.push_back({prefix + ".b2", m.b2});
}

std::vector<NamedParam> collect_params(Denoiser& m) {
  std::vector<NamedParam> out;
  out.push_back({"embed.W", m.in_W});
  out.push_back({"embed.b", m.in_b});
  out.push_back({"temb.W1", m.temb.W1});
  out.push_back({"temb.b1", m.temb.b1});
  out.push_back({"temb.W2", m.temb.W2});
  out.push_back({"temb.b2", m.temb.b2});
  for (size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    const std::string p = "blocks." + std::to_string(i);
    push_norm(out, p + ".spatial.norm", b.norm_spatial);
    push_attn(out, p + ".spatial.attn", b.spatial);
    push_norm(out, p + ".temporal.norm", b.norm_temporal);
    push_attn(out, p + ".temporal.attn", b.temporal);
    push_norm(out, p + ".dffm.norm", b.dffm.norm);
    push_attn(out, p + ".dffm.attn", b.dffm.attn);
    if (b.has_ldam) {
      push_norm(out, p + ".ldam.norm", b.ldam.norm);
      push_attn(out, p + ".ldam.attn", b.ldam.attn);
      out.push_back({p + ".ldam.proj.W", b.ldam.proj_W});
      out.push_back({p + ".ldam.proj.b", b.ldam.proj_b});
    }
    push_norm(out, p + ".mlp.norm", b.norm_mlp);
    push_mlp(out, p + ".mlp", b.mlp);
    out.push_back({p + ".ada.W", b.ada.W});
    out.push_back({p + ".ada.b", b.ada.b});
  }
  out.push_back({"cond.embed.W", m.cond.in_W});
  out.push_back({"cond.embed.b", m.cond.in_b});
  push_norm(out, "cond.spatial.norm", m.cond.norm_spatial);
  push_attn(out, "cond.spatial.attn", m.cond.spatial);
  push_norm(out, "cond.temporal.norm", m.cond.norm_temporal);
  push_attn(out, "cond.temporal.attn", m.cond.temporal);
  push_norm(out, "cond.mlp.norm", m.cond.norm_mlp);
  push_mlp(out, "cond.mlp", m.cond.mlp);
  out.push_back({"cond.ada.W", m.cond.ada.W});
  out.push_back({"cond.ada.b", m.cond.ada.b});
  out.push_back({"cond.gate", m.cond.gate});
  push_norm(out, "head.norm", m.head.norm);
  out.push_back({"head.mod.W", m.head.mod.W});
  out.push_back({"head.mod.b", m.head.mod.b});
  out.push_back({"head.W", m.head.W});
  out.push_back({"head.b", m.head.b});
  return out;
}

}  // namespace

std::vector<NamedParam> Denoiser::parameters() { return collect_params(*this); }
std::vector<NamedParam> Denoiser::parameters() const {
  return collect_params(const_cast<Denoiser&>(*this));
}

// ---------------------------------------------------------------- forward

namespace {

struct SublayerMod {
  Tensor shift, scale, gate;
};

std::vector<SublayerMod> ada_mods(const AdaWeights& a, const Tensor& t_emb) {
  const int64_t d = t_emb.dim(-1);
  Tensor h = gelu(t_emb);
  Tensor packed = linear(h, a.W, a.b);  // [1, chunks*d]
  std::vector<SublayerMod> mods;
  const int groups = a.chunks / 3;
  for (int i = 0; i < groups; ++i)
    mods.push_back({slice_lastdim(packed, (3 * i) * d, d),
                    slice_lastdim(packed, (3 * i + 1) * d, d),
                    slice_lastdim(packed, (3 * i + 2) * d, d)});
  return mods;
}

Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& scale) {
  return add(mul(x, add_scalar(scale, 1.0)), shift);
}

Tensor mlp_forward(const MlpWeights& m, const Tensor& x) {
  return linear(gelu(linear(x, m.W1, m.b1)), m.W2, m.b2);
}

constexpr double kNormEps = 1e-5;

// shared ST-DiT sublayer chain; the conditioning replica runs the same path
struct BlockCore {
  const NormWeights* norm_spatial;
  const NormWeights* norm_temporal;
  const NormWeights* norm_mlp;
  const AttentionWeights* spatial;
  const AttentionWeights* temporal;
  const MlpWeights* mlp;
};

Tensor sublayer_spatial(const BlockCore& c, Tensor x, const SublayerMod& m) {
  Tensor h = modulate(layer_norm(x, c.norm_spatial->gain, c.norm_spatial->bias, kNormEps),
                      m.shift, m.scale);
  return add(x, mul(spatial_attention(h, *c.spatial), m.gate));
}

Tensor sublayer_temporal(const BlockCore& c, Tensor x, const SublayerMod& m) {
  Tensor h = modulate(layer_norm(x, c.norm_temporal->gain, c.norm_temporal->bias, kNormEps),
                      m.shift, m.scale);
  return add(x, mul(temporal_attention(h, *c.temporal), m.gate));
}

Tensor sublayer_mlp(const BlockCore& c, Tensor x, const SublayerMod& m) {
  Tensor h = modulate(layer_norm(x, c.norm_mlp->gain, c.norm_mlp->bias, kNormEps),
                      m.shift, m.scale);
  return add(x, mul(mlp_forward(*c.mlp, h), m.gate));
}

Tensor embed_tokens(const Denoiser& model, const Tensor& latent, const Tensor& W,
                    const Tensor& b) {
  const auto& cfg = model.cfg;
  Tensor tok = patchify(latent, cfg.p);
  Tensor x = linear(tok, W, b);
  Tensor pos = positional_encoding(static_cast<int>(latent.dim(0)), cfg.grid_h(), cfg.grid_w(),
                                   cfg.d, cfg.dtype);
  return add(x, pos);
}

std::atomic<uint64_t> g_extract_calls{0};

}  // namespace

Tensor timestep_embedding(const TimestepEmbed& temb, int t, int T, int d, DType dt) {
  if (t < 0 || t > T) throw ContractError("timestep_embedding: t out of range");
  Tensor freq = Tensor::zeros({1, d}, dt);
  auto& im = freq.impl();
  const int npairs = d / 2;
  for (int j = 0; j < npairs; ++j) {
    const double w = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(npairs));
    im.set(2 * j, std::sin(w * static_cast<double>(t)));
    im.set(2 * j + 1, std::cos(w * static_cast<double>(t)));
  }
  if (d % 2 != 0) im.set(d - 1, std::sin(static_cast<double>(t)));
  Tensor h = gelu(linear(freq, temb.W1, temb.b1));
  return linear(h, temb.W2, temb.b2);
}

Tensor conditioning_forward(const ConditioningBlock& c, const ModelConfig& cfg,
                            const ConditioningInputs& inputs, const Tensor& t_emb) {
  inputs.validate(cfg);
  Tensor cat = concat_lastdim({inputs.x_a, inputs.m_c, inputs.pose_map});
  Tensor tok = patchify(cat, cfg.p);
  Tensor x = linear(tok, c.in_W, c.in_b);
  Tensor pos = positional_encoding(static_cast<int>(cat.dim(0)), cfg.grid_h(), cfg.grid_w(),
                                   cfg.d, cfg.dtype);
  x = add(x, pos);
  BlockCore core{&c.norm_spatial, &c.norm_temporal, &c.norm_mlp,
                 &c.spatial,      &c.temporal,      &c.mlp};
  auto mods = ada_mods(c.ada, t_emb);
  x = sublayer_spatial(core, x, mods[0]);
  x = sublayer_temporal(core, x, mods[1]);
  x = sublayer_mlp(core, x, mods[2]);
  return mul(x, c.gate);
}

Tensor denoise(const Denoiser& model, const Tensor& z_t, int t, const ConditioningInputs* cond,
               const FeatureBank* bank, const LimbGather* g) {
  const auto& cfg = model.cfg;
  if (z_t.rank() != 4 || z_t.dim(1) != cfg.h || z_t.dim(2) != cfg.w || z_t.dim(3) != cfg.cz)
    throw ConfigError("denoise: latent shape does not match config");
  if (cfg.enable_dffm) {
    if (!bank) throw StateError("denoise: feature bank required while fusion is enabled");
    if (!bank->sealed()) throw StateError("denoise: feature bank is not sealed");
    if (bank->size() != cfg.num_blocks)
      throw StateError("denoise: bank must hold one entry per block");
  }
  if (cfg.any_ldam() && !g) throw ContractError("denoise: limb gather required");

  Tensor x = embed_tokens(model, z_t, model.in_W, model.in_b);
  Tensor t_emb = timestep_embedding(model.temb, t, cfg.T, cfg.d, cfg.dtype);
  if (cond) x = add(x, conditioning_forward(model.cond, cfg, *cond, t_emb));

  for (size_t i = 0; i < model.blocks.size(); ++i) {
    const auto& b = model.blocks[i];
    BlockCore core{&b.norm_spatial, &b.norm_temporal, &b.norm_mlp,
                   &b.spatial,      &b.temporal,      &b.mlp};
    auto mods = ada_mods(b.ada, t_emb);
    x = sublayer_spatial(core, x, mods[0]);
    x = sublayer_temporal(core, x, mods[1]);
    if (cfg.enable_dffm) x = dffm_fuse(x, bank->entry(static_cast<int>(i)), b.dffm, kNormEps);
    if (b.has_ldam) x = ldam_forward(x, *g, b.ldam, kNormEps);
    x = sublayer_mlp(core, x, mods[2]);
  }

  Tensor head_packed = linear(gelu(t_emb), model.head.mod.W, model.head.mod.b);  // [1, 2d]
  Tensor hn = layer_norm(x, model.head.norm.gain, model.head.norm.bias, kNormEps);
  Tensor hm = modulate(hn, slice_lastdim(head_packed, 0, cfg.d),
                       slice_lastdim(head_packed, cfg.d, cfg.d));
  Tensor out_tok = linear(hm, model.head.W, model.head.b);
  return unpatchify(out_tok, cfg.h, cfg.w, cfg.p);
}

FeatureBank garment_mode_forward(const Denoiser& model, const Tensor& garment_latent) {
  const auto& cfg = model.cfg;
  if (garment_latent.rank() != 4 || garment_latent.dim(0) != 1 ||
      garment_latent.dim(1) != cfg.h || garment_latent.dim(2) != cfg.w ||
      garment_latent.dim(3) != cfg.cz)
    throw ConfigError("garment forward: expected a single [1,h,w,cz] frame");
  g_extract_calls.fetch_add(1, std::memory_order_relaxed);

  NoGradGuard ng;  // extraction never touches weights or grads
  FeatureBank bank;
  Tensor x = embed_tokens(model, garment_latent, model.in_W, model.in_b);
  Tensor t_emb = timestep_embedding(model.temb, 0, cfg.T, cfg.d, cfg.dtype);
  for (size_t i = 0; i < model.blocks.size(); ++i) {
    const auto& b = model.blocks[i];
    BlockCore core{&b.norm_spatial, &b.norm_temporal, &b.norm_mlp,
                   &b.spatial,      &b.temporal,      &b.mlp};
    auto mods = ada_mods(b.ada, t_emb);
    x = sublayer_spatial(core, x, mods[0]);
    bank.put(static_cast<int>(i), x);  // fusion-point tap
    x = sublayer_mlp(core, x, mods[2]);
  }
  bank.seal();
  return bank;
}

FeatureBank extract_garment_features(const Denoiser& model, const Tensor& garment_latent) {
  return garment_mode_forward(model, garment_latent);
}

uint64_t garment_extract_call_count() { return g_extract_calls.load(std::memory_order_relaxed); }

}  // namespace tryon
