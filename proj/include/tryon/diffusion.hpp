#pragma once

#include <functional>

#include "tryon/adamw.hpp"
#include "tryon/backbone.hpp"

namespace tryon {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // linear between the endpoints
  std::vector<double> alpha_bar;  // cumulative products of (1 - beta)
  static NoiseSchedule make(int T, double beta_start, double beta_end);
};

// closed-form forward marginal z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

enum class TrainStage { SpatialCross = 1, All = 2, LdamOnly = 3 };
const char* stage_name(TrainStage s);

// which parameters a stage updates, by name
bool stage_trains_param(TrainStage stage, const std::string& name);

struct TrainSample {
  Tensor gt;       // [f,h,w,cz]
  Tensor garment;  // [1,h,w,cz]
  ConditioningInputs cond;
  PoseSequence pose;
  LimbGather gather;
  Tensor loss_weights;   // [f,h,w,1]
  double weight_total = 0.0;  // sum of weights, counting channel broadcast
  double lambda_bg = 0.1;
};

// inpaint-or-limb pixels weigh 1, the background lambda_bg
Tensor make_loss_weights(const Tensor& m_c, const LimbGather& g, int p, double lambda_bg);

// weighted mean squared error: sum(w (a-b)^2) / sum(w)
Tensor weighted_mse(const Tensor& pred, const Tensor& target, const Tensor& weights,
                    double weight_total);

struct LossResult {
  Tensor loss;
  int t = 0;
};

// Draws t and the noise from rng, rebuilds the garment bank against the
// current weights, and scores the denoiser's noise prediction.
LossResult training_loss(const Denoiser& model, const TrainSample& sample,
                         const NoiseSchedule& sched, Rng& rng);

// Ancestral sampling from pure noise over `steps` evenly spaced schedule
// points (steps == T walks every step). The garment bank is built exactly
// once per call. Deterministic given the rng.
Tensor sample_video(const Denoiser& model, const ConditioningInputs& cond, const Tensor& garment,
                    const LimbGather& g, const NoiseSchedule& sched, int steps, Rng& rng);

struct StageConfig {
  int steps = 100;
  double lr = 1e-3;
  int batch = 1;
  double weight_decay = 0.0;
};

struct StepRecord {
  int stage = 0;
  int64_t step = 0;  // absolute index within the stage
  double t_mean = 0.0;
  double loss = 0.0;
};

struct StageReport {
  std::vector<StepRecord> records;
  double initial_smoothed = 0.0;  // mean over the first window
  double final_smoothed = 0.0;    // mean over the last window
  int window = 0;
};

using StepSink = std::function<void(const StepRecord&)>;

// One training stage. Freezing is exact: parameters outside the stage
// predicate have requires_grad turned off, never receive gradients, and are
// not passed to the optimizer. Each step draws its randomness from a seed
// mixed from (run_seed, stage, absolute step), so interrupted runs resume
// bit-identically. start_step > 0 continues an earlier run of this stage.
StageReport run_stage(TrainStage stage, const StageConfig& cfg,
                      const std::vector<TrainSample>& dataset, Denoiser& model, AdamW& opt,
                      const NoiseSchedule& sched, uint64_t run_seed, int64_t start_step = 0,
                      const StepSink& sink = nullptr);

// f=1 view of one frame, for the image-pair stage
TrainSample slice_frame(const TrainSample& sample, int frame, const ModelConfig& cfg,
                        double lambda_bg);

}  // namespace tryon
