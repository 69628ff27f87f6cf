#pragma once

#include "tryon/tokenizer.hpp"

namespace tryon {

struct SsimOptions {
  int window = 8;       // non-overlapping windows; partial edges are skipped
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

// Mean windowed structural similarity. Accepts [h,w], [h,w,c] or [f,h,w,c];
// windows are averaged over channels and frames. Window statistics use
// population variance. Images smaller than the window fall back to a single
// window covering the whole image.
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt = {});

double psnr(const Tensor& a, const Tensor& b, double data_range = 1.0);

// MSE between consecutive-frame differences of `video` and of `gt`.
double temporal_flicker(const Tensor& video, const Tensor& gt);

// Same, restricted to pixels marked in a static [h,w] mask.
double temporal_flicker_masked(const Tensor& video, const Tensor& gt,
                               const std::vector<uint8_t>& pixel_mask);

// SSIM over the bounding box of the mask's union across frames.
double region_ssim(const Tensor& a, const Tensor& b, const Tensor& m_c,
                   const SsimOptions& opt = {});

struct FlopReport {
  std::string attention_type;  // spatial | temporal | full3d | ldam
  int B = 1, f = 0, s = 0, d = 0, L = 0, n = 0;
  uint64_t measured_flops = 0;  // counted score+value products
  uint64_t analytic_flops = 0;
  uint64_t peak_live_bytes = 0;
};

struct BenchGrid {
  std::vector<int> B{1}, f{2, 4}, s{16, 64}, d{16, 32}, L{4}, n{8, 12};
};

// Runs every attention layout at every grid point with live counters and
// asserts measured == analytic on the score/value products.
std::vector<FlopReport> bench_attention(const BenchGrid& grid, uint64_t seed);

// Single measured point for one layout (used by the scaling assertions).
FlopReport measure_attention(const std::string& type, int B, int f, int s, int d, int L, int n,
                             uint64_t seed);

struct ParamReport {
  int64_t dffm_extra_params = 0;      // fusion weights across all blocks
  int64_t replica_encoder_params = 0; // a full copy of the backbone's blocks
  double ratio = 0.0;
  int num_blocks = 0;
  int d = 0;
};

// parameters of one backbone block without the fusion/limb slots
int64_t block_core_params(int d);

ParamReport param_report(const ModelConfig& cfg);

}  // namespace tryon
