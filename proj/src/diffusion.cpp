#include "tryon/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "tryon/ops.hpp"

namespace tryon {

NoiseSchedule NoiseSchedule::make(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<size_t>(T));
  s.alpha_bar.resize(static_cast<size_t>(T));
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
    s.beta[static_cast<size_t>(t)] = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - s.beta[static_cast<size_t>(t)];
    s.alpha_bar[static_cast<size_t>(t)] = prod;
  }
  return s;
}

Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.T) throw ContractError("q_sample: t out of range");
  if (eps.shape() != z0.shape()) throw ShapeError("q_sample: eps shape mismatch");
  const double abar = sched.alpha_bar[static_cast<size_t>(t)];
  return add(scale(z0, std::sqrt(abar)), scale(eps, std::sqrt(1.0 - abar)));
}

const char* stage_name(TrainStage s) {
  switch (s) {
    case TrainStage::SpatialCross: return "stage1";
    case TrainStage::All: return "stage2";
    case TrainStage::LdamOnly: return "stage3";
  }
  return "?";
}

bool stage_trains_param(TrainStage stage, const std::string& name) {
  switch (stage) {
    case TrainStage::SpatialCross:
      // spatial self-attention plus garment cross-attention; the conditioning
      // replica joins in stage 2
      if (name.rfind("cond.", 0) == 0) return false;
      return name.find(".spatial.") != std::string::npos ||
             name.find(".dffm.") != std::string::npos;
    case TrainStage::All:
      return true;
    case TrainStage::LdamOnly:
      return name.find(".ldam.") != std::string::npos;
  }
  return false;
}

Tensor make_loss_weights(const Tensor& m_c, const LimbGather& g, int p, double lambda_bg) {
  if (m_c.rank() != 4 || m_c.dim(3) != 1) throw ShapeError("loss weights: mask must be [f,h,w,1]");
  const int64_t f = m_c.dim(0), h = m_c.dim(1), w = m_c.dim(2);
  const int64_t gw = w / p;
  Tensor out = Tensor::zeros({f, h, w, 1}, m_c.dtype());
  auto& oi = out.impl();
  const auto& mi = m_c.impl();
  for (int64_t fr = 0; fr < f; ++fr)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const int64_t i = (fr * h + y) * w + x;
        bool hot = mi.get(i) != 0.0;
        if (!hot) {
          const int64_t token = (y / p) * gw + (x / p);
          for (int l = 0; l < g.L && !hot; ++l)
            hot = g.mask[(static_cast<size_t>(l) * g.f + fr) * g.s + token] != 0;
        }
        oi.set(i, hot ? 1.0 : lambda_bg);
      }
  return out;
}

Tensor weighted_mse(const Tensor& pred, const Tensor& target, const Tensor& weights,
                    double weight_total) {
  if (pred.shape() != target.shape()) throw ShapeError("weighted_mse: shape mismatch");
  if (weight_total <= 0.0) throw ContractError("weighted_mse: weight total must be positive");
  Tensor diff = sub(pred, target);
  Tensor sq = mul(diff, diff);
  return scale(sum_all(mul(sq, weights)), 1.0 / weight_total);
}

LossResult training_loss(const Denoiser& model, const TrainSample& sample,
                         const NoiseSchedule& sched, Rng& rng) {
  const int t = static_cast<int>(rng.uniform_int(0, sched.T - 1));
  Tensor eps = Tensor::randn(sample.gt.shape(), rng, sample.gt.dtype());
  FeatureBank bank;
  if (model.cfg.enable_dffm) bank = extract_garment_features(model, sample.garment);
  Tensor z_t = q_sample(sample.gt, t, eps, sched);
  Tensor pred = denoise(model, z_t, t, &sample.cond,
                        model.cfg.enable_dffm ? &bank : nullptr, &sample.gather);
  Tensor loss = weighted_mse(pred, eps, sample.loss_weights, sample.weight_total);
  return {loss, t};
}

Tensor sample_video(const Denoiser& model, const ConditioningInputs& cond, const Tensor& garment,
                    const LimbGather& g, const NoiseSchedule& sched, int steps, Rng& rng) {
  if (steps < 1 || steps > sched.T) throw ContractError("sample: steps must be in [1, T]");
  NoGradGuard ng;
  FeatureBank bank = extract_garment_features(model, garment);  // built once per run

  std::vector<int> ts(static_cast<size_t>(steps));
  for (int j = 0; j < steps; ++j)
    ts[static_cast<size_t>(j)] =
        steps == 1 ? sched.T - 1
                   : static_cast<int>(std::llround(static_cast<double>(j) *
                                                   (sched.T - 1) / (steps - 1)));

  const int64_t f = cond.x_a.dim(0);
  Tensor z = Tensor::randn({f, model.cfg.h, model.cfg.w, model.cfg.cz}, rng, model.cfg.dtype);
  for (int j = steps - 1; j >= 0; --j) {
    const int t_hi = ts[static_cast<size_t>(j)];
    const int t_lo = j > 0 ? ts[static_cast<size_t>(j - 1)] : -1;
    Tensor eps_hat = denoise(model, z, t_hi, &cond,
                             model.cfg.enable_dffm ? &bank : nullptr, &g);
    const double abar_hi = sched.alpha_bar[static_cast<size_t>(t_hi)];
    const double abar_lo = t_lo >= 0 ? sched.alpha_bar[static_cast<size_t>(t_lo)] : 1.0;
    Tensor x0_hat = scale(sub(z, scale(eps_hat, std::sqrt(1.0 - abar_hi))),
                          1.0 / std::sqrt(abar_hi));
    // keep the clean-latent estimate inside a loose data box; the synthetic
    // latents live in [0,1] and unclamped estimates diverge early in sampling
    {
      auto& xi = x0_hat.impl();
      for (int64_t i = 0; i < xi.numel(); ++i)
        xi.set(i, std::clamp(xi.get(i), -1.0, 2.0));
    }
    if (t_lo < 0) {
      z = x0_hat;
      break;
    }
    const double alpha_step = abar_hi / abar_lo;
    const double c_z = std::sqrt(alpha_step) * (1.0 - abar_lo) / (1.0 - abar_hi);
    const double c_x0 = std::sqrt(abar_lo) * (1.0 - alpha_step) / (1.0 - abar_hi);
    const double var = (1.0 - abar_lo) * (1.0 - alpha_step) / (1.0 - abar_hi);
    Tensor noise = Tensor::randn(z.shape(), rng, z.dtype());
    z = add(add(scale(z, c_z), scale(x0_hat, c_x0)), scale(noise, std::sqrt(var)));
  }
  return z;
}

TrainSample slice_frame(const TrainSample& sample, int frame, const ModelConfig& cfg,
                        double lambda_bg) {
  const int64_t f = sample.gt.dim(0);
  if (frame < 0 || frame >= f) throw ContractError("slice_frame: frame out of range");
  const int64_t h = sample.gt.dim(1), w = sample.gt.dim(2), cz = sample.gt.dim(3);

  auto take = [&](const Tensor& t, int64_t ch) {
    Tensor out = Tensor::zeros({1, h, w, ch}, t.dtype());
    const size_t bytes = static_cast<size_t>(h * w * ch) * dtype_size(t.dtype());
    std::memcpy(out.impl().buf.data(), t.impl().buf.data() + frame * bytes, bytes);
    return out;
  };

  TrainSample out;
  out.gt = take(sample.gt, cz);
  out.garment = sample.garment;
  out.cond.x_a = take(sample.cond.x_a, cz);
  out.cond.m_c = take(sample.cond.m_c, 1);
  out.cond.pose_map = take(sample.cond.pose_map, 1);

  PoseSequence pose;
  pose.frames = 1;
  const size_t off = static_cast<size_t>(frame) * PoseSequence::kNumKeypoints;
  pose.coords.assign(sample.pose.coords.begin() + off,
                     sample.pose.coords.begin() + off + PoseSequence::kNumKeypoints);
  pose.visible.assign(sample.pose.visible.begin() + off,
                      sample.pose.visible.begin() + off + PoseSequence::kNumKeypoints);
  out.pose = pose;

  auto S = rasterize_limb_masks(pose, cfg.grid_h(), cfg.grid_w(), cfg.limb_radius, cfg.L);
  out.gather = build_limb_gather(S, cfg.L, 1, cfg.tokens_per_frame(), cfg.n_cap);
  out.loss_weights = make_loss_weights(out.cond.m_c, out.gather, cfg.p, lambda_bg);
  double total = 0.0;
  for (int64_t i = 0; i < out.loss_weights.numel(); ++i) total += out.loss_weights.impl().get(i);
  out.weight_total = total * static_cast<double>(cz);
  out.lambda_bg = lambda_bg;
  return out;
}

StageReport run_stage(TrainStage stage, const StageConfig& cfg,
                      const std::vector<TrainSample>& dataset, Denoiser& model, AdamW& opt,
                      const NoiseSchedule& sched, uint64_t run_seed, int64_t start_step,
                      const StepSink& sink) {
  if (dataset.empty()) throw ContractError("run_stage: empty dataset");
  if (cfg.steps < 1 || cfg.batch < 1) throw ConfigError("run_stage: steps and batch must be >= 1");

  auto all_params = model.parameters();
  std::vector<NamedParam> trainable;
  for (auto& p : all_params) {
    const bool on = stage_trains_param(stage, p.name);
    p.tensor.set_requires_grad(on);
    if (on) trainable.push_back(p);
  }
  if (trainable.empty()) throw StateError("run_stage: stage trains no parameters");
  opt.set_lr(cfg.lr);

  const bool image_mode = stage == TrainStage::SpatialCross;
  StageReport report;
  // smoothing window: 50 steps at scale, non-overlapping halves on short runs
  report.window = std::min(50, std::max(1, cfg.steps / 2));

  for (int64_t step = start_step; step < cfg.steps; ++step) {
    Rng step_rng(Rng::mix(run_seed, Rng::mix(static_cast<uint64_t>(stage),
                                             static_cast<uint64_t>(step))));
    opt.zero_grad(trainable);

    Tensor loss_acc;
    double t_sum = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto idx = step_rng.uniform_int(0, static_cast<int64_t>(dataset.size()) - 1);
      const TrainSample* sample = &dataset[static_cast<size_t>(idx)];
      TrainSample sliced;
      if (image_mode && sample->gt.dim(0) > 1) {
        const int frame = static_cast<int>(step_rng.uniform_int(0, sample->gt.dim(0) - 1));
        sliced = slice_frame(*sample, frame, model.cfg, sample->lambda_bg);
        sample = &sliced;
      }
      LossResult r = training_loss(model, *sample, sched, step_rng);
      t_sum += r.t;
      loss_acc = loss_acc.defined() ? add(loss_acc, r.loss) : r.loss;
    }
    Tensor loss = scale(loss_acc, 1.0 / cfg.batch);
    backward(loss);
    opt.step(trainable);

    StepRecord rec{static_cast<int>(stage), step, t_sum / cfg.batch, loss.item()};
    report.records.push_back(rec);
    if (sink) sink(rec);
  }

  const int w = report.window;
  auto mean_of = [&](size_t lo, size_t hi) {
    double acc = 0.0;
    for (size_t i = lo; i < hi; ++i) acc += report.records[i].loss;
    return acc / static_cast<double>(hi - lo);
  };
  if (!report.records.empty()) {
    const size_t n = report.records.size();
    const size_t win = std::max<size_t>(1, std::min<size_t>(static_cast<size_t>(w), n / 2));
    report.initial_smoothed = mean_of(0, win);
    report.final_smoothed = mean_of(n - win, n);
  }

  // leave the model fully thawed so later inspection sees ordinary tensors
  for (auto& p : all_params) p.tensor.set_requires_grad(true);
  return report;
}

}  // namespace tryon
