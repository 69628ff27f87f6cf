#pragma once

#include "tryon/tensor.hpp"

namespace tryon {

// Model geometry. h and w are latent-space dims (pixel dims divided by 8);
// tokens_per_frame() is the patch-grid cell count.
struct ModelConfig {
  int f = 4;           // frames
  int h = 16;          // latent height
  int w = 16;          // latent width
  int cz = 4;          // latent channels
  int p = 2;           // patch size
  int d = 32;          // hidden dim
  int heads = 4;
  int num_blocks = 2;
  int L = 4;           // limbs
  int n_cap = 12;      // limb token pad/truncation length
  int T = 100;         // diffusion steps
  int limb_radius = 0; // Chebyshev dilation of limb masks, in grid cells
  bool enable_dffm = true;
  std::vector<uint8_t> ldam_blocks;  // per-block toggle; empty = all on
  DType dtype = DType::f32;

  int grid_h() const { return h / p; }
  int grid_w() const { return w / p; }
  int tokens_per_frame() const { return grid_h() * grid_w(); }
  int patch_dim() const { return p * p * cz; }
  bool ldam_enabled(int block) const {
    if (ldam_blocks.empty()) return true;
    return ldam_blocks[static_cast<size_t>(block)] != 0;
  }
  bool any_ldam() const {
    if (ldam_blocks.empty()) return true;
    for (uint8_t b : ldam_blocks)
      if (b) return true;
    return false;
  }

  void validate() const;
};

// [f,h,w,cz] -> [f,s,p*p*cz]. Token order is raster over the patch grid
// (patch row major), and within a patch raster over (row, col, channel).
// Pure rearrangement; unpatchify inverts it bit-exactly.
Tensor patchify(const Tensor& z, int p);
Tensor unpatchify(const Tensor& tok, int h, int w, int p);

// Deterministic sinusoidal encoding [f,s,d]: first half of d encodes the 2-D
// patch coordinate (quarter each), second half the frame index.
Tensor positional_encoding(int f, int gh, int gw, int d, DType dt);

}  // namespace tryon
