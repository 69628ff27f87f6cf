#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "oracles.hpp"
#include "tryon/benchmetrics.hpp"
#include "tryon/checkpoint.hpp"
#include "tryon/io.hpp"
#include "tryon/ops.hpp"
#include "tryon/png.hpp"
#include "tryon/synthdata.hpp"

using namespace tryon;

namespace {

// direct per-window reference, computed with separate two-pass statistics
double ssim_oracle(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                   int win, double R) {
  const double c1 = 0.01 * R * 0.01 * R, c2 = 0.03 * R * 0.03 * R;
  double acc = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + win <= h; y0 += win)
    for (int x0 = 0; x0 + win <= w; x0 += win) {
      const int n = win * win;
      double ma = 0, mb = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          ma += a[static_cast<size_t>((y0 + y) * w + x0 + x)];
          mb += b[static_cast<size_t>((y0 + y) * w + x0 + x)];
        }
      ma /= n;
      mb /= n;
      double va = 0, vb = 0, cov = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          const double da = a[static_cast<size_t>((y0 + y) * w + x0 + x)] - ma;
          const double db = b[static_cast<size_t>((y0 + y) * w + x0 + x)] - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      va /= n;
      vb /= n;
      cov /= n;
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return acc / count;
}

}  // namespace

TEST_CASE("ssim of an image with itself is exactly 1") {
  Rng rng(1);
  Tensor x = Tensor::randn({16, 16}, rng, DType::f64);
  CHECK(ssim(x, x) == 1.0);
}

TEST_CASE("ssim matches the direct formula oracle") {
  Rng rng(2);
  Tensor a = Tensor::randn({16, 24}, rng, DType::f64);
  Tensor b = add(a, Tensor::randn({16, 24}, rng, DType::f64, 0.25));
  const double got = ssim(a, b);
  const double ref = ssim_oracle(a.to_vector(), b.to_vector(), 16, 24, 8, 1.0);
  CHECK(std::abs(got - ref) <= 1e-10);
}

TEST_CASE("ssim is symmetric and ranks noise above inversion") {
  Rng rng(3);
  // structured image: smooth gradient plus stripes
  Tensor a = Tensor::zeros({16, 16}, DType::f64);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      a.impl().set(y * 16 + x, 0.3 + 0.4 * ((x / 4) % 2) + 0.02 * y);
  Tensor noisy = add(a, Tensor::randn({16, 16}, rng, DType::f64, 0.01));
  Tensor inverted = add_scalar(scale(a, -1.0), 1.0);
  CHECK(ssim(a, inverted) < ssim(a, noisy));
  CHECK(std::abs(ssim(a, noisy) - ssim(noisy, a)) <= 1e-12);
}

TEST_CASE("psnr of identical images is infinite and decreases with noise") {
  Rng rng(4);
  Tensor a = Tensor::randn({8, 8}, rng, DType::f64);
  CHECK(std::isinf(psnr(a, a)));
  Tensor small = add(a, Tensor::randn({8, 8}, rng, DType::f64, 0.01));
  Tensor big = add(a, Tensor::randn({8, 8}, rng, DType::f64, 0.3));
  CHECK(psnr(a, small) > psnr(a, big));
}

TEST_CASE("temporal flicker closed forms") {
  Rng rng(5);
  Tensor gt = Tensor::randn({4, 4, 4, 2}, rng, DType::f64);
  CHECK(temporal_flicker(gt, gt) == 0.0);

  // static gt, prediction alternating +-eps around it
  const double e = 0.05;
  Tensor still = Tensor::full({4, 4, 4, 1}, 0.5, DType::f64);
  Tensor flick = still.clone();
  for (int fr = 0; fr < 4; ++fr)
    for (int i = 0; i < 16; ++i)
      flick.impl().set(fr * 16 + i, 0.5 + (fr % 2 == 0 ? e : -e));
  CHECK(temporal_flicker(flick, still) == doctest::Approx(4 * e * e).epsilon(1e-12));

  CHECK_THROWS_AS(temporal_flicker(Tensor::zeros({1, 2, 2, 1}), Tensor::zeros({1, 2, 2, 1})),
                  ContractError);
}

TEST_CASE("flicker treats frame order symmetrically") {
  Rng rng(6);
  Tensor gt = Tensor::randn({3, 4, 4, 1}, rng, DType::f64);
  Tensor v = Tensor::randn({3, 4, 4, 1}, rng, DType::f64);
  // reversing both sequences leaves the metric unchanged
  auto reverse_frames = [](const Tensor& t) {
    Tensor out = t.clone();
    const int64_t f = t.dim(0), per = t.numel() / t.dim(0);
    for (int64_t fr = 0; fr < f; ++fr)
      for (int64_t i = 0; i < per; ++i)
        out.impl().set(fr * per + i, t.impl().get((f - 1 - fr) * per + i));
    return out;
  };
  CHECK(temporal_flicker(reverse_frames(v), reverse_frames(gt)) ==
        doctest::Approx(temporal_flicker(v, gt)).epsilon(1e-12));
}

TEST_CASE("region ssim crops the mask bounding box") {
  ScenarioConfig sc;
  SyntheticSample s = gen_sample(sc, 7, DType::f64);
  CHECK(region_ssim(s.gt, s.gt, s.cond.m_c) == 1.0);
  // clobbering the masked region hurts region ssim more than psnr-style noise
  Tensor damaged = s.gt.clone();
  for (int64_t i = 0; i < damaged.numel(); ++i)
    if (s.cond.m_c.impl().get(i / s.gt.dim(3)) != 0.0) damaged.impl().set(i, 0.0);
  CHECK(region_ssim(s.gt, damaged, s.cond.m_c) < 0.6);
}

TEST_CASE("flop reports match the analytic formulas on a sweep") {
  BenchGrid grid;
  grid.f = {2, 4};
  grid.s = {16};
  grid.d = {16};
  grid.L = {4};
  grid.n = {8};
  auto reports = bench_attention(grid, 99);
  CHECK(reports.size() == 2 * 4);  // four types per (f) point
  for (const auto& r : reports) CHECK(r.measured_flops == r.analytic_flops);
}

TEST_CASE("f-doubling exponents: x2 spatial, x4 temporal, x4 full, x1 ldam") {
  auto at_f = [&](const std::string& type, int f) {
    return measure_attention(type, 1, f, 16, 16, 4, 8, 5).measured_flops;
  };
  CHECK(at_f("spatial", 8) == 2 * at_f("spatial", 4));
  CHECK(at_f("temporal", 8) == 4 * at_f("temporal", 4));
  CHECK(at_f("full3d", 8) == 4 * at_f("full3d", 4));
  CHECK(at_f("ldam", 8) == at_f("ldam", 4));
}

TEST_CASE("spatial and temporal flop counts swap under f and s exchange") {
  const auto a = measure_attention("spatial", 1, 3, 10, 16, 0, 0, 1).measured_flops;
  const auto b = measure_attention("temporal", 1, 10, 3, 16, 0, 0, 1).measured_flops;
  CHECK(a == b);
}

TEST_CASE("full3d outspends ldam in peak bytes once the sequence dominates") {
  const auto full = measure_attention("full3d", 1, 4, 64, 16, 0, 0, 3);
  const auto ldam = measure_attention("ldam", 1, 4, 64, 16, 4, 8, 3);
  CHECK(full.peak_live_bytes > ldam.peak_live_bytes);
}

TEST_CASE("parameter report: ratio under a quarter and constant in depth") {
  ModelConfig cfg;
  cfg.d = 128;
  cfg.num_blocks = 2;
  ParamReport r2 = param_report(cfg);
  CHECK(r2.ratio <= 0.25);
  CHECK(r2.dffm_extra_params == 2 * dffm_params_per_block(128));
  cfg.num_blocks = 4;
  ParamReport r4 = param_report(cfg);
  cfg.num_blocks = 8;
  ParamReport r8 = param_report(cfg);
  CHECK(r2.ratio == r4.ratio);
  CHECK(r4.ratio == r8.ratio);

  ModelConfig bad = cfg;
  bad.num_blocks = 0;
  CHECK_THROWS_AS(param_report(bad), ConfigError);
}

TEST_CASE("replica parameter count equals a real block's tensors") {
  ModelConfig cfg;
  cfg.d = 32;
  cfg.num_blocks = 1;
  cfg.ldam_blocks = {0};  // core block only
  Denoiser model = Denoiser::init(cfg, 1);
  int64_t counted = 0;
  for (const auto& p : model.parameters())
    if (p.name.rfind("blocks.0.", 0) == 0 && p.name.find(".dffm.") == std::string::npos)
      counted += p.tensor.numel();
  CHECK(counted == block_core_params(32));
}

TEST_CASE("png previews are valid and deterministic") {
  ScenarioConfig sc;
  SyntheticSample s = gen_sample(sc, 11, DType::f32);
  auto dir = std::filesystem::temp_directory_path() / "tryon_png_test";
  std::filesystem::create_directories(dir);
  save_frame_previews(dir, "gt", s.gt);
  auto p0 = dir / "gt_f000.png";
  REQUIRE(std::filesystem::exists(p0));
  const std::string bytes = read_text_file(p0);
  CHECK(bytes.substr(1, 3) == "PNG");
  save_frame_previews(dir, "again", s.gt);
  CHECK(read_text_file(dir / "again_f000.png") == bytes);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint round trip restores parameters and optimizer state") {
  ModelConfig cfg;
  cfg.f = 2;
  cfg.h = 8;
  cfg.w = 8;
  cfg.d = 16;
  cfg.num_blocks = 1;
  Denoiser model = Denoiser::init(cfg, 5);
  AdamW opt({.lr = 2e-3, .weight_decay = 0.01});
  // touch the optimizer state
  auto params = model.parameters();
  std::vector<NamedParam> one{params[0]};
  opt.step(one);

  CheckpointMeta meta;
  meta.stage_completed = 2;
  meta.run_seed = 404;
  auto dir = std::filesystem::temp_directory_path() / "tryon_ckpt_test";
  save_checkpoint(dir, model, opt, meta);
  LoadedCheckpoint loaded = load_checkpoint(dir);
  CHECK(hash_params(loaded.model.parameters()) == hash_params(model.parameters()));
  CHECK(loaded.meta.stage_completed == 2);
  CHECK(loaded.meta.run_seed == 404);
  CHECK(loaded.opt.config().lr == 2e-3);
  REQUIRE(loaded.opt.state().count(params[0].name) == 1);
  const auto& st = loaded.opt.state().at(params[0].name);
  CHECK(st.step == 1);
  CHECK(std::memcmp(st.m.impl().buf.data(), opt.state().at(params[0].name).m.impl().buf.data(),
                    st.m.impl().buf.size()) == 0);
  std::filesystem::remove_all(dir);
}
