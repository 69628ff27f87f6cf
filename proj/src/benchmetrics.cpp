#include "tryon/benchmetrics.hpp"

#include <algorithm>
#include <cmath>

#include "tryon/attention.hpp"
#include "tryon/ldam.hpp"
#include "tryon/ops.hpp"

namespace tryon {

namespace {

struct ImageView {
  const TensorImpl* impl;
  int64_t frames, h, w, c;
  double at(int64_t fr, int64_t y, int64_t x, int64_t ch) const {
    return impl->get(((fr * h + y) * w + x) * c + ch);
  }
};

ImageView as_image(const Tensor& t) {
  const auto& im = t.impl();
  switch (t.rank()) {
    case 2: return {&im, 1, t.dim(0), t.dim(1), 1};
    case 3: return {&im, 1, t.dim(0), t.dim(1), t.dim(2)};
    case 4: return {&im, t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
    default: throw ShapeError("metrics: expected [h,w], [h,w,c] or [f,h,w,c]");
  }
}

double ssim_window(const ImageView& a, const ImageView& b, int64_t fr, int64_t ch, int64_t y0,
                   int64_t x0, int64_t wy, int64_t wx, double c1, double c2) {
  const double n = static_cast<double>(wy * wx);
  double ma = 0.0, mb = 0.0;
  for (int64_t y = 0; y < wy; ++y)
    for (int64_t x = 0; x < wx; ++x) {
      ma += a.at(fr, y0 + y, x0 + x, ch);
      mb += b.at(fr, y0 + y, x0 + x, ch);
    }
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (int64_t y = 0; y < wy; ++y)
    for (int64_t x = 0; x < wx; ++x) {
      const double da = a.at(fr, y0 + y, x0 + x, ch) - ma;
      const double db = b.at(fr, y0 + y, x0 + x, ch) - mb;
      va += da * da;
      vb += db * db;
      cov += da * db;
    }
  va /= n;
  vb /= n;
  cov /= n;
  return ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
         ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch");
  ImageView va = as_image(a), vb = as_image(b);
  const double c1 = opt.k1 * opt.data_range * opt.k1 * opt.data_range;
  const double c2 = opt.k2 * opt.data_range * opt.k2 * opt.data_range;
  const int64_t wy = std::min<int64_t>(opt.window, va.h);
  const int64_t wx = std::min<int64_t>(opt.window, va.w);
  double acc = 0.0;
  int64_t count = 0;
  for (int64_t fr = 0; fr < va.frames; ++fr)
    for (int64_t ch = 0; ch < va.c; ++ch)
      for (int64_t y0 = 0; y0 + wy <= va.h; y0 += wy)
        for (int64_t x0 = 0; x0 + wx <= va.w; x0 += wx) {
          acc += ssim_window(va, vb, fr, ch, y0, x0, wy, wx, c1, c2);
          ++count;
        }
  if (count == 0) throw ContractError("ssim: image smaller than a single window");
  return acc / static_cast<double>(count);
}

double psnr(const Tensor& a, const Tensor& b, double data_range) {
  if (a.shape() != b.shape()) throw ShapeError("psnr: shape mismatch");
  const auto& ia = a.impl();
  const auto& ib = b.impl();
  double mse = 0.0;
  for (int64_t i = 0; i < ia.numel(); ++i) {
    const double d = ia.get(i) - ib.get(i);
    mse += d * d;
  }
  mse /= static_cast<double>(ia.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

double temporal_flicker(const Tensor& video, const Tensor& gt) {
  if (video.shape() != gt.shape()) throw ShapeError("flicker: shape mismatch");
  if (video.rank() != 4 || video.dim(0) < 2)
    throw ContractError("flicker: needs [f,h,w,c] with f >= 2");
  const int64_t f = video.dim(0);
  const int64_t per_frame = video.numel() / f;
  const auto& iv = video.impl();
  const auto& ig = gt.impl();
  double acc = 0.0;
  for (int64_t fr = 0; fr + 1 < f; ++fr)
    for (int64_t i = 0; i < per_frame; ++i) {
      const double dv = iv.get((fr + 1) * per_frame + i) - iv.get(fr * per_frame + i);
      const double dg = ig.get((fr + 1) * per_frame + i) - ig.get(fr * per_frame + i);
      acc += (dv - dg) * (dv - dg);
    }
  return acc / static_cast<double>((f - 1) * per_frame);
}

double temporal_flicker_masked(const Tensor& video, const Tensor& gt,
                               const std::vector<uint8_t>& pixel_mask) {
  if (video.shape() != gt.shape()) throw ShapeError("flicker: shape mismatch");
  if (video.rank() != 4 || video.dim(0) < 2)
    throw ContractError("flicker: needs [f,h,w,c] with f >= 2");
  const int64_t f = video.dim(0), h = video.dim(1), w = video.dim(2), c = video.dim(3);
  if (pixel_mask.size() != static_cast<size_t>(h * w))
    throw ShapeError("flicker: mask must cover one frame");
  const auto& iv = video.impl();
  const auto& ig = gt.impl();
  double acc = 0.0;
  int64_t count = 0;
  for (int64_t fr = 0; fr + 1 < f; ++fr)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        if (!pixel_mask[static_cast<size_t>(y * w + x)]) continue;
        for (int64_t ch = 0; ch < c; ++ch) {
          const int64_t i = ((y * w) + x) * c + ch;
          const int64_t lo = fr * h * w * c + i;
          const int64_t hi = (fr + 1) * h * w * c + i;
          const double dv = iv.get(hi) - iv.get(lo);
          const double dg = ig.get(hi) - ig.get(lo);
          acc += (dv - dg) * (dv - dg);
          ++count;
        }
      }
  if (count == 0) throw ContractError("flicker: empty mask");
  return acc / static_cast<double>(count);
}

double region_ssim(const Tensor& a, const Tensor& b, const Tensor& m_c, const SsimOptions& opt) {
  if (a.shape() != b.shape()) throw ShapeError("region_ssim: shape mismatch");
  if (a.rank() != 4 || m_c.rank() != 4) throw ShapeError("region_ssim: expected [f,h,w,c]");
  const int64_t f = a.dim(0), h = a.dim(1), w = a.dim(2), c = a.dim(3);
  int64_t y0 = h, y1 = -1, x0 = w, x1 = -1;
  const auto& mi = m_c.impl();
  for (int64_t fr = 0; fr < f; ++fr)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        if (mi.get((fr * h + y) * w + x) != 0.0) {
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
  if (y1 < y0) throw ContractError("region_ssim: empty mask");
  const int64_t ch = y1 - y0 + 1, cw = x1 - x0 + 1;
  Tensor ca = Tensor::zeros({f, ch, cw, c}, DType::f64);
  Tensor cb = Tensor::zeros({f, ch, cw, c}, DType::f64);
  const auto& ia = a.impl();
  const auto& ib = b.impl();
  for (int64_t fr = 0; fr < f; ++fr)
    for (int64_t y = 0; y < ch; ++y)
      for (int64_t x = 0; x < cw; ++x)
        for (int64_t k = 0; k < c; ++k) {
          const int64_t src = ((fr * h + y0 + y) * w + x0 + x) * c + k;
          const int64_t dst = ((fr * ch + y) * cw + x) * c + k;
          ca.impl().set(dst, ia.get(src));
          cb.impl().set(dst, ib.get(src));
        }
  SsimOptions ropt = opt;
  ropt.window = static_cast<int>(std::min<int64_t>({opt.window, ch, cw}));
  return ssim(ca, cb, ropt);
}

// ---------------------------------------------------------------- flop harness

FlopReport measure_attention(const std::string& type, int B, int f, int s, int d, int L, int n,
                             uint64_t seed) {
  if (B < 1 || f < 1 || s < 1 || d < 1) throw ConfigError("bench: bad grid point");
  NoGradGuard ng;
  Rng rng(seed);
  const int heads = d % 4 == 0 ? 4 : 1;
  AttentionWeights w = AttentionWeights::init(d, heads, rng, DType::f32);

  FlopReport rep;
  rep.attention_type = type;
  rep.B = B;
  rep.f = f;
  rep.s = s;
  rep.d = d;
  rep.L = L;
  rep.n = n;

  auto& c = Counters::global();
  if (type == "ldam") {
    if (static_cast<int64_t>(L) * n > static_cast<int64_t>(f) * s)
      throw ConfigError("bench: limb tokens exceed the sequence");
    std::vector<uint8_t> S(static_cast<size_t>(L) * f * s, 0);
    for (int l = 0; l < L; ++l)
      for (int j = 0; j < n; ++j) S[static_cast<size_t>(l) * f * s + l * n + j] = 1;
    LimbGather g = build_limb_gather(S, L, f, s, n);
    Tensor r_p = Tensor::randn({f, s, d}, rng);
    Tensor mask = g.attention_mask(DType::f32);
    c.reset();
    const uint64_t base = c.current_live_bytes;
    for (int b = 0; b < B; ++b) limb_attention(gather_pad(r_p, g), mask, w);
    rep.measured_flops = c.score_value_flops;
    rep.peak_live_bytes = c.peak_live_bytes - base;
    rep.analytic_flops = 4ull * B * L * n * n * d;
  } else {
    Tensor r = Tensor::randn({f, s, d}, rng);
    c.reset();
    const uint64_t base = c.current_live_bytes;
    for (int b = 0; b < B; ++b) {
      if (type == "spatial")
        spatial_attention(r, w);
      else if (type == "temporal")
        temporal_attention(r, w);
      else if (type == "full3d")
        full_3d_attention(r, w);
      else
        throw ConfigError("bench: unknown attention type " + type);
    }
    rep.measured_flops = c.score_value_flops;
    rep.peak_live_bytes = c.peak_live_bytes - base;
    const uint64_t fs = static_cast<uint64_t>(f) * s;
    if (type == "spatial")
      rep.analytic_flops = 4ull * B * f * s * s * d;
    else if (type == "temporal")
      rep.analytic_flops = 4ull * B * s * f * f * d;
    else
      rep.analytic_flops = 4ull * B * fs * fs * d;
  }
  if (rep.measured_flops != rep.analytic_flops)
    throw ContractError("bench: measured flops diverge from the analytic count for " + type);
  return rep;
}

std::vector<FlopReport> bench_attention(const BenchGrid& grid, uint64_t seed) {
  std::vector<FlopReport> out;
  for (int B : grid.B)
    for (int f : grid.f)
      for (int s : grid.s)
        for (int d : grid.d) {
          out.push_back(measure_attention("spatial", B, f, s, d, 0, 0, seed));
          out.push_back(measure_attention("temporal", B, f, s, d, 0, 0, seed));
          out.push_back(measure_attention("full3d", B, f, s, d, 0, 0, seed));
          for (int L : grid.L)
            for (int n : grid.n) {
              if (static_cast<int64_t>(L) * n > static_cast<int64_t>(f) * s) continue;
              out.push_back(measure_attention("ldam", B, f, s, d, L, n, seed));
            }
        }
  return out;
}

int64_t block_core_params(int d) {
  const int64_t dd = static_cast<int64_t>(d);
  const int64_t attn = 4 * dd * dd + 4 * dd;
  return 2 * (attn + 2 * dd)       // spatial + temporal with their norms
         + (8 * dd * dd + 5 * dd)  // mlp
         + 2 * dd                  // mlp norm
         + (9 * dd * dd + 9 * dd); // modulation
}

ParamReport param_report(const ModelConfig& cfg) {
  if (cfg.num_blocks < 1) throw ConfigError("param_report: need at least one block");
  ParamReport r;
  r.num_blocks = cfg.num_blocks;
  r.d = cfg.d;
  r.dffm_extra_params = static_cast<int64_t>(cfg.num_blocks) * dffm_params_per_block(cfg.d);
  r.replica_encoder_params = static_cast<int64_t>(cfg.num_blocks) * block_core_params(cfg.d);
  r.ratio = static_cast<double>(r.dffm_extra_params) /
            static_cast<double>(r.replica_encoder_params);
  return r;
}

}  // namespace tryon
