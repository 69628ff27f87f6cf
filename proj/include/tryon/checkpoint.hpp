#pragma once

#include <filesystem>

#include <json.hpp>

#include "tryon/adamw.hpp"
#include "tryon/backbone.hpp"

namespace tryon {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct CheckpointMeta {
  double beta_start = 1e-3;
  double beta_end = 0.15;
  int stage_completed = 0;    // highest fully finished stage
  int in_progress_stage = 0;  // 0 when no stage is mid-flight
  int64_t in_progress_step = 0;
  uint64_t run_seed = 0;
  double lambda_bg = 0.1;
};

// Directory layout: manifest.json plus params/<name>.dten and, per optimizer
// slot, opt/<name>.{m,v}.dten. Everything needed to resume bit-identically.
void save_checkpoint(const std::filesystem::path& dir, const Denoiser& model, const AdamW& opt,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Denoiser model;
  AdamW opt;
  CheckpointMeta meta;
  LoadedCheckpoint(Denoiser m, AdamW o, CheckpointMeta me)
      : model(std::move(m)), opt(std::move(o)), meta(me) {}
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace tryon
