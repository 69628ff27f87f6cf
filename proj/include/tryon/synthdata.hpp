#pragma once

#include <filesystem>

#include "tryon/backbone.hpp"
#include "tryon/diffusion.hpp"

namespace tryon {

// Procedural try-on scene: a textured torso rectangle translating across the
// frame with four swinging limb bars, all with closed-form ground truth.
struct ScenarioConfig {
  int f = 4;
  int h = 16;
  int w = 16;
  int cz = 4;
  std::string trajectory = "sinusoidal";  // or "linear"
  double velocity = 0.8;                  // cells per frame (amplitude for sinusoidal)
  double swing_amplitude = 0.06;          // limb swing in normalized units
  double swing_frequency = 1.0;           // cycles over the clip
  std::string texture = "checker";        // checker | stripes | glyph
  int texture_cell = 4;                   // pattern cell size in latent pixels
  double noise_floor = 0.04;              // background gradient amplitude

  void validate() const;
};

struct SyntheticSample {
  Tensor gt;       // [f,h,w,cz]
  Tensor garment;  // [1,h,w,cz], texture at the canonical centered position
  ConditioningInputs cond;
  PoseSequence pose;
  uint64_t seed = 0;
  int torso_x0 = 0, torso_y0 = 0, torso_w = 0, torso_h = 0;  // canonical box
  std::vector<int> offsets_x, offsets_y;                     // per-frame translation
};

// Deterministic given (cfg, seed). The torso region of gt equals the garment
// texture under the frame's integer translation exactly; x_a = gt outside
// the mask; limb bars follow the pose keypoints at latent resolution.
SyntheticSample gen_sample(const ScenarioConfig& cfg, uint64_t seed, DType dt);

// Sample i is generated from base_seed + i.
std::vector<SyntheticSample> gen_dataset(const ScenarioConfig& cfg, int count,
                                         uint64_t base_seed, DType dt);

// dataset directory layout: manifest.json plus one subdirectory per sample
// holding gt/agnostic/mask/garment DTEN dumps and the pose JSON
void save_sample(const std::filesystem::path& dir, const SyntheticSample& s);
SyntheticSample load_sample(const std::filesystem::path& dir);

TrainSample make_train_sample(const SyntheticSample& s, const ModelConfig& cfg, double lambda_bg);

}  // namespace tryon
