#include "tryon/tokenizer.hpp"

#include <cmath>

#include "tryon/ops.hpp"

namespace tryon {

void ModelConfig::validate() const {
  if (f < 1 || h < 1 || w < 1 || cz < 1 || p < 1 || d < 1 || heads < 1 || num_blocks < 1)
    throw ConfigError("model config: all dimensions must be positive");
  if (h % p != 0 || w % p != 0)
    throw ConfigError("model config: latent dims must be divisible by patch size");
  if (d % heads != 0) throw ConfigError("model config: d must be divisible by heads");
  if (d % 4 != 0) throw ConfigError("model config: d must be divisible by 4");
  if (L < 1 || L > 4) throw ConfigError("model config: L must be in [1,4]");
  if (n_cap < 1) throw ConfigError("model config: n_cap must be >= 1");
  if (T < 1) throw ConfigError("model config: T must be >= 1");
  if (limb_radius < 0) throw ConfigError("model config: limb_radius must be >= 0");
  if (!ldam_blocks.empty() && ldam_blocks.size() != static_cast<size_t>(num_blocks))
    throw ConfigError("model config: ldam_blocks length must equal num_blocks");
}

Tensor patchify(const Tensor& z, int p) {
  if (z.rank() != 4) throw ConfigError("patchify: expected [f,h,w,c]");
  const int64_t f = z.dim(0), h = z.dim(1), w = z.dim(2), c = z.dim(3);
  if (h % p != 0 || w % p != 0) throw ConfigError("patchify: dims not divisible by patch size");
  const int64_t gh = h / p, gw = w / p;
  const int64_t s = gh * gw;
  const int64_t pd = static_cast<int64_t>(p) * p * c;
  // gather re-indexing expressed as a row permutation of the flattened input
  Tensor rows = reshape(z, {f * h * w, c});
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(f * s * p * p));
  for (int64_t fr = 0; fr < f; ++fr)
    for (int64_t pr = 0; pr < gh; ++pr)
      for (int64_t pc = 0; pc < gw; ++pc)
        for (int64_t dr = 0; dr < p; ++dr)
          for (int64_t dc = 0; dc < p; ++dc)
            idx.push_back(fr * h * w + (pr * p + dr) * w + (pc * p + dc));
  Tensor tok = gather_rows(rows, idx);
  return reshape(tok, {f, s, pd});
}

Tensor unpatchify(const Tensor& tok, int h, int w, int p) {
  if (tok.rank() != 3) throw ConfigError("unpatchify: expected [f,s,p*p*c]");
  const int64_t f = tok.dim(0), s = tok.dim(1), pd = tok.dim(2);
  const int64_t gh = h / p, gw = w / p;
  if (h % p != 0 || w % p != 0 || s != gh * gw || pd % (static_cast<int64_t>(p) * p) != 0)
    throw ConfigError("unpatchify: inconsistent dims");
  const int64_t c = pd / (static_cast<int64_t>(p) * p);
  Tensor rows = reshape(tok, {f * s * p * p, c});
  // scatter destination per source row is again a permutation: build the
  // inverse index so it stays a single gather
  std::vector<int64_t> inv(static_cast<size_t>(f * h * w));
  int64_t src = 0;
  for (int64_t fr = 0; fr < f; ++fr)
    for (int64_t pr = 0; pr < gh; ++pr)
      for (int64_t pc = 0; pc < gw; ++pc)
        for (int64_t dr = 0; dr < p; ++dr)
          for (int64_t dc = 0; dc < p; ++dc)
            inv[static_cast<size_t>(fr * h * w + (pr * p + dr) * w + (pc * p + dc))] = src++;
  Tensor out = gather_rows(rows, inv);
  return reshape(out, {f, h, w, c});
}

namespace {

// (sin, cos) pairs share a frequency, so dot products between two positions
// collapse to sum_j cos(w_j * delta) and decay with |delta| at small offsets.
void write_sincos(TensorImpl& im, int64_t base, int span, double pos) {
  const int npairs = span / 2;
  for (int j = 0; j < npairs; ++j) {
    const double w = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(npairs));
    im.set(base + 2 * j, std::sin(w * pos));
    im.set(base + 2 * j + 1, std::cos(w * pos));
  }
  if (span % 2 != 0) im.set(base + span - 1, std::sin(pos));
}

}  // namespace

Tensor positional_encoding(int f, int gh, int gw, int d, DType dt) {
  if (d % 4 != 0) throw ConfigError("positional_encoding: d must be divisible by 4");
  const int64_t s = static_cast<int64_t>(gh) * gw;
  Tensor out = Tensor::zeros({f, s, d}, dt);
  auto& im = out.impl();
  const int quarter = d / 4;
  const int half = d / 2;
  for (int64_t fr = 0; fr < f; ++fr) {
    for (int64_t t = 0; t < s; ++t) {
      const double row = static_cast<double>(t / gw);
      const double col = static_cast<double>(t % gw);
      const int64_t base = (fr * s + t) * d;
      write_sincos(im, base, quarter, row);
      write_sincos(im, base + quarter, quarter, col);
      write_sincos(im, base + half, half, static_cast<double>(fr));
    }
  }
  return out;
}

}  // namespace tryon
