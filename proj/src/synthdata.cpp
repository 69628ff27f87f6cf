#include "tryon/synthdata.hpp"

#include <cmath>

#include <json.hpp>

#include "tryon/io.hpp"
#include "tryon/ops.hpp"

namespace tryon {

void ScenarioConfig::validate() const {
  if (f < 1 || h < 8 || w < 8 || cz < 1) throw ConfigError("scenario: grid too small");
  if (texture != "checker" && texture != "stripes" && texture != "glyph")
    throw ConfigError("scenario: unknown texture family " + texture);
  if (trajectory != "linear" && trajectory != "sinusoidal")
    throw ConfigError("scenario: unknown trajectory " + trajectory);
  if (texture_cell < 1) throw ConfigError("scenario: texture_cell must be >= 1");
  if (velocity < 0.0 || swing_amplitude < 0.0 || swing_frequency < 0.0 || noise_floor < 0.0)
    throw ConfigError("scenario: negative motion parameters");
}

namespace {

constexpr double kPi = 3.14159265358979323846;

struct SceneGeometry {
  int tw, th;       // torso box
  int x0, y0;       // canonical top-left
  std::vector<int> off_x, off_y;
};

SceneGeometry make_geometry(const ScenarioConfig& cfg) {
  SceneGeometry geo;
  geo.tw = std::max(2, static_cast<int>(std::lround(cfg.w * 0.30)));
  geo.th = std::max(2, static_cast<int>(std::lround(cfg.h * 0.38)));
  geo.x0 = (cfg.w - geo.tw) / 2;
  geo.y0 = static_cast<int>(std::lround(cfg.h * 0.20));
  geo.off_x.resize(static_cast<size_t>(cfg.f));
  geo.off_y.assign(static_cast<size_t>(cfg.f), 0);
  for (int fr = 0; fr < cfg.f; ++fr) {
    double off = 0.0;
    if (cfg.trajectory == "linear") {
      off = cfg.velocity * (fr - (cfg.f - 1) / 2.0);
    } else {
      const double amp = cfg.velocity * cfg.f / 2.0;
      off = amp * std::sin(2.0 * kPi * fr / cfg.f);
    }
    geo.off_x[static_cast<size_t>(fr)] = static_cast<int>(std::lround(off));
  }
  return geo;
}

double texture_value(const ScenarioConfig& cfg, int u, int v, double lo, double hi, int tw) {
  const int cu = u / cfg.texture_cell;
  const int cv = v / cfg.texture_cell;
  if (cfg.texture == "checker") return ((cu + cv) % 2 == 0) ? hi : lo;
  if (cfg.texture == "stripes") return (cu % 2 == 0) ? hi : lo;
  // glyph: a blocky T, bright bar on top plus a bright stem
  const bool bar = v < cfg.texture_cell;
  const bool stem = std::abs(2 * u - tw + 1) <= cfg.texture_cell;
  return (bar || stem) ? hi : lo;
}

double background_value(const ScenarioConfig& cfg, int c, int x, int y) {
  const double grad = (static_cast<double>(x) / cfg.w + static_cast<double>(y) / cfg.h) / 2.0;
  return 0.08 + 0.03 * c + cfg.noise_floor * grad;
}

void place(PoseSequence& p, int fr, int kp, double x, double y) {
  if (x < 0.01 || x > 0.99 || y < 0.01 || y > 0.99)
    throw ConfigError("scenario: trajectory pushes the figure out of frame");
  p.coords[static_cast<size_t>(fr) * PoseSequence::kNumKeypoints + kp] = {x, y};
  p.visible[static_cast<size_t>(fr) * PoseSequence::kNumKeypoints + kp] = 1;
}

}  // namespace

SyntheticSample gen_sample(const ScenarioConfig& cfg, uint64_t seed, DType dt) {
  cfg.validate();
  const SceneGeometry geo = make_geometry(cfg);
  Rng rng(Rng::mix(seed, 0x5363656eull));

  // per-channel texture colors from the seed
  std::vector<double> lo(static_cast<size_t>(cfg.cz)), hi(static_cast<size_t>(cfg.cz));
  for (int c = 0; c < cfg.cz; ++c) {
    lo[static_cast<size_t>(c)] = 0.20 + 0.25 * rng.uniform();
    hi[static_cast<size_t>(c)] = 0.60 + 0.35 * rng.uniform();
  }
  const double swing_phase = 2.0 * kPi * rng.uniform();

  // pose
  PoseSequence pose;
  pose.frames = cfg.f;
  pose.coords.assign(static_cast<size_t>(cfg.f) * PoseSequence::kNumKeypoints, {0.5, 0.5});
  pose.visible.assign(static_cast<size_t>(cfg.f) * PoseSequence::kNumKeypoints, 0);
  const double arm_seg = 0.16, leg_seg = 0.15, leg_spread = 0.08;
  for (int fr = 0; fr < cfg.f; ++fr) {
    const double bx = geo.x0 + geo.off_x[static_cast<size_t>(fr)];
    const double by = geo.y0 + geo.off_y[static_cast<size_t>(fr)];
    const double cx = (bx + geo.tw / 2.0) / cfg.w;
    const double swing =
        cfg.swing_amplitude * std::sin(2.0 * kPi * cfg.swing_frequency * fr / cfg.f + swing_phase);
    place(pose, fr, 1, cx, (by - 0.5) / cfg.h);                       // neck
    place(pose, fr, 0, cx, (by - 0.5) / cfg.h - 0.08);                // head
    const double shoulder_y = (by + 0.5) / cfg.h;
    const double lshx = (bx - 0.5) / cfg.w, rshx = (bx + geo.tw + 0.5) / cfg.w;
    place(pose, fr, 2, lshx, shoulder_y);
    place(pose, fr, 3, rshx, shoulder_y);
    place(pose, fr, 4, lshx - 0.02 + swing, shoulder_y + arm_seg);    // elbows
    place(pose, fr, 5, rshx + 0.02 - swing, shoulder_y + arm_seg);
    place(pose, fr, 6, lshx - 0.02 + 2.0 * swing, shoulder_y + 2.0 * arm_seg);  // wrists
    place(pose, fr, 7, rshx + 0.02 - 2.0 * swing, shoulder_y + 2.0 * arm_seg);
    const double hip_y = (by + geo.th - 0.5) / cfg.h;
    place(pose, fr, 8, cx, hip_y);                                    // hip center
    place(pose, fr, 9, cx - leg_spread - swing, hip_y + leg_seg);     // knees
    place(pose, fr, 10, cx + leg_spread - swing, hip_y + leg_seg);
    place(pose, fr, 11, cx - leg_spread - 2.0 * swing, hip_y + 2.0 * leg_seg);  // ankles
    place(pose, fr, 12, cx + leg_spread - 2.0 * swing, hip_y + 2.0 * leg_seg);
  }

  SyntheticSample s;
  s.seed = seed;
  s.pose = pose;
  s.torso_x0 = geo.x0;
  s.torso_y0 = geo.y0;
  s.torso_w = geo.tw;
  s.torso_h = geo.th;
  s.offsets_x = geo.off_x;
  s.offsets_y = geo.off_y;

  // limb bars at latent resolution, same walk as the conditioning render
  auto limb_pixels = rasterize_limb_masks(pose, cfg.h, cfg.w, 0, 4);

  s.gt = Tensor::zeros({cfg.f, cfg.h, cfg.w, cfg.cz}, dt);
  s.garment = Tensor::zeros({1, cfg.h, cfg.w, cfg.cz}, dt);
  Tensor mask = Tensor::zeros({cfg.f, cfg.h, cfg.w, 1}, dt);
  auto& gi = s.gt.impl();
  auto& gri = s.garment.impl();
  auto& mi = mask.impl();

  for (int fr = 0; fr < cfg.f; ++fr) {
    const int bx = geo.x0 + geo.off_x[static_cast<size_t>(fr)];
    const int by = geo.y0 + geo.off_y[static_cast<size_t>(fr)];
    if (bx < 0 || by < 0 || bx + geo.tw > cfg.w || by + geo.th > cfg.h)
      throw ConfigError("scenario: torso trajectory leaves the frame");
    for (int y = 0; y < cfg.h; ++y)
      for (int x = 0; x < cfg.w; ++x) {
        const bool in_torso = x >= bx && x < bx + geo.tw && y >= by && y < by + geo.th;
        bool in_limb = false;
        for (int l = 0; l < 4 && !in_limb; ++l)
          in_limb = limb_pixels[((static_cast<size_t>(l) * cfg.f + fr) * cfg.h + y) * cfg.w + x];
        for (int c = 0; c < cfg.cz; ++c) {
          double v = background_value(cfg, c, x, y);
          if (in_limb) v = 0.95 - 0.05 * c;  // body bars under the clothing
          if (in_torso)
            v = texture_value(cfg, x - bx, y - by, lo[static_cast<size_t>(c)],
                              hi[static_cast<size_t>(c)], geo.tw);
          gi.set(((static_cast<int64_t>(fr) * cfg.h + y) * cfg.w + x) * cfg.cz + c, v);
        }
        if (in_torso) mi.set((static_cast<int64_t>(fr) * cfg.h + y) * cfg.w + x, 1.0);
      }
  }

  // canonical garment image: same texture at the untranslated box
  for (int y = 0; y < cfg.h; ++y)
    for (int x = 0; x < cfg.w; ++x) {
      const bool in_torso =
          x >= geo.x0 && x < geo.x0 + geo.tw && y >= geo.y0 && y < geo.y0 + geo.th;
      for (int c = 0; c < cfg.cz; ++c) {
        double v = background_value(cfg, c, x, y);
        if (in_torso)
          v = texture_value(cfg, x - geo.x0, y - geo.y0, lo[static_cast<size_t>(c)],
                            hi[static_cast<size_t>(c)], geo.tw);
        gri.set((static_cast<int64_t>(y) * cfg.w + x) * cfg.cz + c, v);
      }
    }

  s.cond.m_c = mask;
  s.cond.pose_map = render_pose_map(pose, cfg.h, cfg.w, dt);
  // x_a = gt outside the inpaint region
  Tensor inv = add_scalar(scale(mask, -1.0), 1.0);
  s.cond.x_a = mul(s.gt, inv);
  return s;
}

std::vector<SyntheticSample> gen_dataset(const ScenarioConfig& cfg, int count, uint64_t base_seed,
                                         DType dt) {
  if (count < 1) throw ConfigError("gen_dataset: count must be >= 1");
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(gen_sample(cfg, base_seed + static_cast<uint64_t>(i), dt));
  return out;
}

void save_sample(const std::filesystem::path& dir, const SyntheticSample& s) {
  std::filesystem::create_directories(dir);
  save_dten(dir / "gt.dten", s.gt);
  save_dten(dir / "agnostic.dten", s.cond.x_a);
  save_dten(dir / "mask.dten", s.cond.m_c);
  save_dten(dir / "garment.dten", s.garment);
  save_pose_json(dir / "pose.json", s.pose);
  nlohmann::json j;
  j["seed"] = s.seed;
  j["torso"] = {{"x0", s.torso_x0}, {"y0", s.torso_y0}, {"w", s.torso_w}, {"h", s.torso_h}};
  j["offsets_x"] = s.offsets_x;
  j["offsets_y"] = s.offsets_y;
  write_text_file(dir / "sample.json", j.dump(2) + "\n");
}

SyntheticSample load_sample(const std::filesystem::path& dir) {
  SyntheticSample s;
  s.gt = load_dten(dir / "gt.dten");
  s.cond.x_a = load_dten(dir / "agnostic.dten");
  s.cond.m_c = load_dten(dir / "mask.dten");
  s.garment = load_dten(dir / "garment.dten");
  s.pose = load_pose_json(dir / "pose.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(dir / "sample.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("sample manifest parse failed: " + std::string(e.what()));
  }
  s.seed = j.at("seed").get<uint64_t>();
  s.torso_x0 = j.at("torso").at("x0").get<int>();
  s.torso_y0 = j.at("torso").at("y0").get<int>();
  s.torso_w = j.at("torso").at("w").get<int>();
  s.torso_h = j.at("torso").at("h").get<int>();
  s.offsets_x = j.at("offsets_x").get<std::vector<int>>();
  s.offsets_y = j.at("offsets_y").get<std::vector<int>>();
  s.cond.pose_map = render_pose_map(s.pose, static_cast<int>(s.gt.dim(1)),
                                    static_cast<int>(s.gt.dim(2)), s.gt.dtype());
  return s;
}

TrainSample make_train_sample(const SyntheticSample& s, const ModelConfig& cfg, double lambda_bg) {
  if (s.gt.dim(1) != cfg.h || s.gt.dim(2) != cfg.w || s.gt.dim(3) != cfg.cz)
    throw ConfigError("train sample: scenario and model dims disagree");
  TrainSample t;
  t.gt = s.gt;
  t.garment = s.garment;
  t.cond = s.cond;
  t.pose = s.pose;
  const int f = static_cast<int>(s.gt.dim(0));
  auto S = rasterize_limb_masks(s.pose, cfg.grid_h(), cfg.grid_w(), cfg.limb_radius, cfg.L);
  t.gather = build_limb_gather(S, cfg.L, f, cfg.tokens_per_frame(), cfg.n_cap);
  t.loss_weights = make_loss_weights(t.cond.m_c, t.gather, cfg.p, lambda_bg);
  double total = 0.0;
  for (int64_t i = 0; i < t.loss_weights.numel(); ++i) total += t.loss_weights.impl().get(i);
  t.weight_total = total * static_cast<double>(cfg.cz);
  t.lambda_bg = lambda_bg;
  return t;
}

}  // namespace tryon
