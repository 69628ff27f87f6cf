#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "oracles.hpp"
#include "tryon/diffusion.hpp"
#include "tryon/ops.hpp"
#include "tryon/synthdata.hpp"

using namespace tryon;

namespace {

ModelConfig toy_config(DType dt = DType::f32) {
  ModelConfig cfg;
  cfg.f = 2;
  cfg.h = 16;
  cfg.w = 16;
  cfg.cz = 2;
  cfg.p = 2;
  cfg.d = 16;
  cfg.heads = 4;
  cfg.num_blocks = 2;
  cfg.L = 4;
  cfg.T = 20;
  cfg.dtype = dt;
  return cfg;
}

ScenarioConfig toy_scenario(const ModelConfig& cfg) {
  ScenarioConfig sc;
  sc.f = cfg.f;
  sc.h = cfg.h;
  sc.w = cfg.w;
  sc.cz = cfg.cz;
  sc.velocity = 0.5;
  return sc;
}

}  // namespace

TEST_CASE("schedule endpoints and the direct-product oracle") {
  NoiseSchedule s1 = NoiseSchedule::make(1, 0.5, 0.5);
  CHECK(s1.alpha_bar == std::vector<double>{0.5});

  NoiseSchedule s = NoiseSchedule::make(1000, 1e-4, 2e-2);
  double prod = 1.0;
  for (int t = 0; t < 1000; ++t) {
    const double beta = 1e-4 + (2e-2 - 1e-4) * t / 999.0;
    prod *= 1.0 - beta;
    CHECK(s.beta[static_cast<size_t>(t)] == doctest::Approx(beta).epsilon(1e-12));
    CHECK(s.alpha_bar[static_cast<size_t>(t)] == doctest::Approx(prod).epsilon(1e-12));
  }
  CHECK(s.alpha_bar[999] < 1e-4);
  for (int t = 1; t < 1000; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);

  CHECK_THROWS_AS(NoiseSchedule::make(10, 0.0, 0.5), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule::make(10, 0.5, 0.1), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule::make(0, 0.1, 0.2), ConfigError);
}

TEST_CASE("alpha_bar decreases for any valid endpoint pair") {
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    const double b0 = 1e-5 + 0.05 * rng.uniform();
    const double b1 = b0 + (0.9 - b0) * rng.uniform();
    const int T = 1 + static_cast<int>(rng.uniform_int(0, 200));
    NoiseSchedule s = NoiseSchedule::make(T, b0, b1);
    for (int t = 0; t < T; ++t) {
      CHECK(s.alpha_bar[static_cast<size_t>(t)] > 0.0);
      CHECK(s.alpha_bar[static_cast<size_t>(t)] < 1.0);
      if (t > 0) CHECK(s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t - 1)]);
      if (t > 0) CHECK(s.beta[static_cast<size_t>(t)] >= s.beta[static_cast<size_t>(t - 1)]);
    }
  }
}

TEST_CASE("q_sample limits and closed-form mean") {
  NoiseSchedule s = NoiseSchedule::make(100, 1e-4, 0.02);
  Rng rng(1);
  Tensor z0 = Tensor::randn({2, 4, 4, 1}, rng, DType::f64);
  Tensor zero_eps = Tensor::zeros(z0.shape(), DType::f64);
  Tensor zt = q_sample(z0, 10, zero_eps, s);
  const double sa = std::sqrt(s.alpha_bar[10]);
  const auto z0v = z0.to_vector();
  const auto ztv = zt.to_vector();
  for (size_t i = 0; i < z0v.size(); ++i)
    CHECK(ztv[i] == doctest::Approx(sa * z0v[i]).epsilon(1e-12));

  // tiny beta, small t: z_t stays close to z0
  NoiseSchedule tiny = NoiseSchedule::make(100, 1e-6, 1e-6);
  Rng rng2(2);
  Tensor eps = Tensor::randn(z0.shape(), rng2, DType::f64);
  Tensor near = q_sample(z0, 0, eps, tiny);
  const auto nv = near.to_vector();
  for (size_t i = 0; i < z0v.size(); ++i) CHECK(std::abs(nv[i] - z0v[i]) < 5e-3);

  CHECK_THROWS_AS(q_sample(z0, 100, zero_eps, s), ContractError);
}

TEST_CASE("q_sample marginal variance matches the closed form within 5%") {
  NoiseSchedule s = NoiseSchedule::make(50, 1e-3, 0.1);
  const int t = 30;
  Rng rng(3);
  const int n = 10000;
  Tensor z0 = Tensor::full({1}, 0.7, DType::f64);
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    Tensor eps = Tensor::randn({1}, rng, DType::f64);
    const double v = q_sample(z0, t, eps, s).item();
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  const double abar = s.alpha_bar[t];
  CHECK(mean == doctest::Approx(std::sqrt(abar) * 0.7).epsilon(0.05));
  CHECK(var == doctest::Approx(1.0 - abar).epsilon(0.05));
}

TEST_CASE("weighted mse is zero on an exact match and positive otherwise") {
  Rng rng(4);
  Tensor a = Tensor::randn({2, 4, 4, 2}, rng, DType::f64);
  Tensor w = Tensor::full({2, 4, 4, 1}, 0.5, DType::f64);
  const double total = 0.5 * 2 * 4 * 4 * 2;
  CHECK(weighted_mse(a, a, w, total).item() == 0.0);
  Tensor b = add_scalar(a, 0.1);
  const double v = weighted_mse(a, b, w, total).item();
  CHECK(v > 0.0);
  CHECK(v == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("loss weights mark inpaint and limb regions") {
  ModelConfig cfg = toy_config();
  ScenarioConfig sc = toy_scenario(cfg);
  SyntheticSample s = gen_sample(sc, 7, cfg.dtype);
  TrainSample ts = make_train_sample(s, cfg, 0.1);
  // inside the torso mask the weight is 1
  int hot = 0, cold = 0;
  for (int fr = 0; fr < cfg.f; ++fr)
    for (int y = 0; y < cfg.h; ++y)
      for (int x = 0; x < cfg.w; ++x) {
        const double wv = ts.loss_weights.at({fr, y, x, 0});
        if (s.cond.m_c.at({fr, y, x, 0}) == 1.0) {
          CHECK(wv == 1.0);
        }
        if (wv == 1.0)
          ++hot;
        else {
          CHECK(wv == doctest::Approx(0.1));
          ++cold;
        }
      }
  CHECK(hot > 0);
  CHECK(cold > 0);
}

TEST_CASE("training loss is zero when the injected prediction equals the noise") {
  // oracle injection at the loss level: score eps against itself
  ModelConfig cfg = toy_config();
  ScenarioConfig sc = toy_scenario(cfg);
  SyntheticSample s = gen_sample(sc, 9, cfg.dtype);
  TrainSample ts = make_train_sample(s, cfg, 0.1);
  Rng rng(5);
  Tensor eps = Tensor::randn(ts.gt.shape(), rng, cfg.dtype);
  CHECK(weighted_mse(eps, eps, ts.loss_weights, ts.weight_total).item() == 0.0);

  // and the full path produces a finite, nonnegative loss
  Denoiser model = Denoiser::init(cfg, 11);
  NoiseSchedule sched = NoiseSchedule::make(cfg.T, 1e-3, 0.15);
  Rng rng2(6);
  LossResult r = training_loss(model, ts, sched, rng2);
  CHECK(r.loss.item() >= 0.0);
  CHECK(r.t >= 0);
  CHECK(r.t < cfg.T);
}

TEST_CASE("stage predicates pick the documented parameter groups") {
  CHECK(stage_trains_param(TrainStage::SpatialCross, "blocks.0.spatial.attn.Wq"));
  CHECK(stage_trains_param(TrainStage::SpatialCross, "blocks.1.dffm.attn.Wo"));
  CHECK(stage_trains_param(TrainStage::SpatialCross, "blocks.0.spatial.norm.gain"));
  CHECK_FALSE(stage_trains_param(TrainStage::SpatialCross, "blocks.0.temporal.attn.Wq"));
  CHECK_FALSE(stage_trains_param(TrainStage::SpatialCross, "cond.spatial.attn.Wq"));
  CHECK_FALSE(stage_trains_param(TrainStage::SpatialCross, "blocks.0.ldam.attn.Wq"));
  CHECK_FALSE(stage_trains_param(TrainStage::SpatialCross, "head.W"));
  CHECK(stage_trains_param(TrainStage::All, "cond.gate"));
  CHECK(stage_trains_param(TrainStage::All, "head.W"));
  CHECK(stage_trains_param(TrainStage::LdamOnly, "blocks.0.ldam.proj.W"));
  CHECK_FALSE(stage_trains_param(TrainStage::LdamOnly, "blocks.0.spatial.attn.Wq"));
  CHECK_FALSE(stage_trains_param(TrainStage::LdamOnly, "cond.gate"));
}

TEST_CASE("frozen parameters receive no gradient at all") {
  ModelConfig cfg = toy_config();
  ScenarioConfig sc = toy_scenario(cfg);
  SyntheticSample s = gen_sample(sc, 13, cfg.dtype);
  TrainSample ts = make_train_sample(s, cfg, 0.1);
  Denoiser model = Denoiser::init(cfg, 17);
  NoiseSchedule sched = NoiseSchedule::make(cfg.T, 1e-3, 0.15);

  auto params = model.parameters();
  for (auto& p : params)
    p.tensor.set_requires_grad(stage_trains_param(TrainStage::LdamOnly, p.name));
  Rng rng(7);
  LossResult r = training_loss(model, ts, sched, rng);
  backward(r.loss);
  for (auto& p : params) {
    if (stage_trains_param(TrainStage::LdamOnly, p.name)) continue;
    CHECK_FALSE(p.tensor.grad().defined());  // frozen: gradient is exactly zero
  }
  // at zero-init projection the limb attention weights see no signal yet,
  // but the projection itself does
  bool proj_has_grad = false;
  for (auto& p : params)
    if (p.name == "blocks.0.ldam.proj.W" && p.tensor.grad().defined()) proj_has_grad = true;
  CHECK(proj_has_grad);
  for (auto& p : params) p.tensor.set_requires_grad(true);
}

TEST_CASE("stage freezing is exact across a short run") {
  ModelConfig cfg = toy_config();
  ScenarioConfig sc = toy_scenario(cfg);
  std::vector<TrainSample> dataset;
  for (int i = 0; i < 2; ++i)
    dataset.push_back(make_train_sample(gen_sample(sc, 100 + i, cfg.dtype), cfg, 0.1));
  Denoiser model = Denoiser::init(cfg, 23);
  NoiseSchedule sched = NoiseSchedule::make(cfg.T, 1e-3, 0.15);
  AdamW opt({.lr = 1e-3});

  auto snapshot = [&](auto pred) {
    std::vector<NamedParam> out;
    for (auto& p : model.parameters())
      if (pred(p.name)) out.push_back({p.name, p.tensor.clone()});
    return out;
  };
  auto frozen_in_stage1 = [](const std::string& n) {
    return !stage_trains_param(TrainStage::SpatialCross, n);
  };
  auto before = snapshot(frozen_in_stage1);
  StageConfig scfg{.steps = 4, .lr = 1e-3, .batch = 1, .weight_decay = 0.0};
  run_stage(TrainStage::SpatialCross, scfg, dataset, model, opt, sched, 900);
  auto after_map = model.parameters();
  for (auto& b : before) {
    for (auto& a : after_map)
      if (a.name == b.name)
        CHECK(std::memcmp(a.tensor.impl().buf.data(), b.tensor.impl().buf.data(),
                          a.tensor.impl().buf.size()) == 0);
  }

  // stage 3 moves only limb parameters
  auto stage2_state = snapshot([](const std::string&) { return true; });
  run_stage(TrainStage::LdamOnly, scfg, dataset, model, opt, sched, 901);
  int moved = 0;
  for (auto& b : stage2_state) {
    for (auto& a : model.parameters()) {
      if (a.name != b.name) continue;
      const bool same = std::memcmp(a.tensor.impl().buf.data(), b.tensor.impl().buf.data(),
                                    a.tensor.impl().buf.size()) == 0;
      if (b.name.find(".ldam.") != std::string::npos) {
        if (!same) ++moved;
      } else {
        CHECK(same);
      }
    }
  }
  CHECK(moved > 0);
}

TEST_CASE("stage runs are bit-reproducible and resumable") {
  ModelConfig cfg = toy_config();
  ScenarioConfig sc = toy_scenario(cfg);
  std::vector<TrainSample> dataset;
  for (int i = 0; i < 2; ++i)
    dataset.push_back(make_train_sample(gen_sample(sc, 200 + i, cfg.dtype), cfg, 0.1));
  NoiseSchedule sched = NoiseSchedule::make(cfg.T, 1e-3, 0.15);
  StageConfig scfg{.steps = 6, .lr = 1e-3, .batch = 1, .weight_decay = 0.0};

  Denoiser m1 = Denoiser::init(cfg, 31);
  AdamW o1({.lr = 1e-3});
  run_stage(TrainStage::All, scfg, dataset, m1, o1, sched, 777);

  // identical fresh run
  Denoiser m2 = Denoiser::init(cfg, 31);
  AdamW o2({.lr = 1e-3});
  run_stage(TrainStage::All, scfg, dataset, m2, o2, sched, 777);
  CHECK(hash_params(m1.parameters()) == hash_params(m2.parameters()));

  // split run: first 3 steps, then resume from step 3
  Denoiser m3 = Denoiser::init(cfg, 31);
  AdamW o3({.lr = 1e-3});
  StageConfig first = scfg;
  first.steps = 3;
  run_stage(TrainStage::All, first, dataset, m3, o3, sched, 777);
  run_stage(TrainStage::All, scfg, dataset, m3, o3, sched, 777, /*start_step=*/3);
  CHECK(hash_params(m1.parameters()) == hash_params(m3.parameters()));
}

TEST_CASE("sampling is deterministic, correctly shaped, and builds one bank") {
  ModelConfig cfg = toy_config();
  ScenarioConfig sc = toy_scenario(cfg);
  SyntheticSample s = gen_sample(sc, 43, cfg.dtype);
  TrainSample ts = make_train_sample(s, cfg, 0.1);
  Denoiser model = Denoiser::init(cfg, 47);
  NoiseSchedule sched = NoiseSchedule::make(cfg.T, 1e-3, 0.15);

  const uint64_t calls_before = garment_extract_call_count();
  Rng r1(55);
  Tensor v1 = sample_video(model, ts.cond, ts.garment, ts.gather, sched, cfg.T, r1);
  CHECK(garment_extract_call_count() == calls_before + 1);  // once per run
  CHECK(v1.shape() == Shape{cfg.f, cfg.h, cfg.w, cfg.cz});

  Rng r2(55);
  Tensor v2 = sample_video(model, ts.cond, ts.garment, ts.gather, sched, cfg.T, r2);
  CHECK(std::memcmp(v1.impl().buf.data(), v2.impl().buf.data(), v1.impl().buf.size()) == 0);

  // strided sampling also runs
  Rng r3(56);
  Tensor v3 = sample_video(model, ts.cond, ts.garment, ts.gather, sched, 5, r3);
  CHECK(v3.shape() == v1.shape());
  CHECK_THROWS_AS(sample_video(model, ts.cond, ts.garment, ts.gather, sched, 0, r3),
                  ContractError);
}
