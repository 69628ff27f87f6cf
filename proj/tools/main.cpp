// dyntryon: data generation, staged training, sampling, benchmarking and the
// oracle self-test for the video try-on model, driven by one JSON config.

#include <CLI11.hpp>
#include <json.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "tryon/benchmetrics.hpp"
#include "tryon/checkpoint.hpp"
#include "tryon/diffusion.hpp"
#include "tryon/io.hpp"
#include "tryon/png.hpp"
#include "tryon/selftest.hpp"
#include "tryon/synthdata.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace tryon;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitContract = 3;
constexpr int kExitIo = 4;

// ---------------------------------------------------------------- run config

struct RunConfig {
  uint64_t seed = 1234;
  ModelConfig model;
  double beta_start = 1e-3;
  double beta_end = 0.17;
  double lambda_bg = 0.1;
  StageConfig stages[3] = {{800, 1e-3, 1, 0.0}, {1600, 1e-3, 1, 0.0}, {600, 5e-4, 1, 0.0}};
  ScenarioConfig data;
  int data_count = 8;
  BenchGrid bench;
  bool bench_flagship = true;
};

void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("config: unknown key \"" + where + key + "\"");
  }
}

template <class T>
void read_into(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig parse_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config: parse failed: " + std::string(e.what()));
  }
  RunConfig rc;
  // desk-scale defaults for the toy task
  rc.model.f = 4;
  rc.model.h = 16;
  rc.model.w = 16;
  rc.model.d = 32;
  rc.model.num_blocks = 2;
  rc.model.T = 100;

  reject_unknown(j, {"seed", "out_dir", "model", "schedule", "stages", "data", "bench"}, "");
  read_into(j, "seed", rc.seed);

  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m,
                   {"f", "h", "w", "cz", "p", "d", "heads", "num_blocks", "L", "n_cap", "T",
                    "limb_radius", "enable_dffm", "ldam_blocks", "precision"},
                   "model.");
    read_into(m, "f", rc.model.f);
    read_into(m, "h", rc.model.h);
    read_into(m, "w", rc.model.w);
    read_into(m, "cz", rc.model.cz);
    read_into(m, "p", rc.model.p);
    read_into(m, "d", rc.model.d);
    read_into(m, "heads", rc.model.heads);
    read_into(m, "num_blocks", rc.model.num_blocks);
    read_into(m, "L", rc.model.L);
    read_into(m, "n_cap", rc.model.n_cap);
    read_into(m, "T", rc.model.T);
    read_into(m, "limb_radius", rc.model.limb_radius);
    read_into(m, "enable_dffm", rc.model.enable_dffm);
    read_into(m, "ldam_blocks", rc.model.ldam_blocks);
    if (m.contains("precision")) {
      const std::string prec = m.at("precision").get<std::string>();
      if (prec != "f32" && prec != "f64")
        throw ConfigError("config: model.precision must be f32 or f64");
      rc.model.dtype = prec == "f32" ? DType::f32 : DType::f64;
    }
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown(s, {"beta_start", "beta_end"}, "schedule.");
    read_into(s, "beta_start", rc.beta_start);
    read_into(s, "beta_end", rc.beta_end);
  }
  if (j.contains("stages")) {
    const json& s = j.at("stages");
    reject_unknown(s, {"lambda_bg", "stage1", "stage2", "stage3"}, "stages.");
    read_into(s, "lambda_bg", rc.lambda_bg);
    const char* names[3] = {"stage1", "stage2", "stage3"};
    for (int i = 0; i < 3; ++i) {
      if (!s.contains(names[i])) continue;
      const json& st = s.at(names[i]);
      reject_unknown(st, {"steps", "lr", "batch", "weight_decay"},
                     std::string("stages.") + names[i] + ".");
      read_into(st, "steps", rc.stages[i].steps);
      read_into(st, "lr", rc.stages[i].lr);
      read_into(st, "batch", rc.stages[i].batch);
      read_into(st, "weight_decay", rc.stages[i].weight_decay);
    }
  }
  rc.data.f = rc.model.f;
  rc.data.h = rc.model.h;
  rc.data.w = rc.model.w;
  rc.data.cz = rc.model.cz;
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d,
                   {"count", "trajectory", "velocity", "swing_amplitude", "swing_frequency",
                    "texture", "texture_cell", "noise_floor"},
                   "data.");
    read_into(d, "count", rc.data_count);
    read_into(d, "trajectory", rc.data.trajectory);
    read_into(d, "velocity", rc.data.velocity);
    read_into(d, "swing_amplitude", rc.data.swing_amplitude);
    read_into(d, "swing_frequency", rc.data.swing_frequency);
    read_into(d, "texture", rc.data.texture);
    read_into(d, "texture_cell", rc.data.texture_cell);
    read_into(d, "noise_floor", rc.data.noise_floor);
  }
  if (j.contains("bench")) {
    const json& b = j.at("bench");
    reject_unknown(b, {"B", "f", "s", "d", "L", "n", "flagship"}, "bench.");
    read_into(b, "B", rc.bench.B);
    read_into(b, "f", rc.bench.f);
    read_into(b, "s", rc.bench.s);
    read_into(b, "d", rc.bench.d);
    read_into(b, "L", rc.bench.L);
    read_into(b, "n", rc.bench.n);
    read_into(b, "flagship", rc.bench_flagship);
  }
  rc.model.validate();
  rc.data.validate();
  return rc;
}

json scenario_to_json(const ScenarioConfig& sc) {
  return json{{"f", sc.f},
              {"h", sc.h},
              {"w", sc.w},
              {"cz", sc.cz},
              {"trajectory", sc.trajectory},
              {"velocity", sc.velocity},
              {"swing_amplitude", sc.swing_amplitude},
              {"swing_frequency", sc.swing_frequency},
              {"texture", sc.texture},
              {"texture_cell", sc.texture_cell},
              {"noise_floor", sc.noise_floor}};
}

json resolved_json(const RunConfig& rc) {
  json stages;
  const char* names[3] = {"stage1", "stage2", "stage3"};
  for (int i = 0; i < 3; ++i)
    stages[names[i]] = {{"steps", rc.stages[i].steps},
                        {"lr", rc.stages[i].lr},
                        {"batch", rc.stages[i].batch},
                        {"weight_decay", rc.stages[i].weight_decay}};
  stages["lambda_bg"] = rc.lambda_bg;
  json data = scenario_to_json(rc.data);
  data["count"] = rc.data_count;
  return json{{"seed", rc.seed},
              {"model", model_config_to_json(rc.model)},
              {"schedule", {{"beta_start", rc.beta_start}, {"beta_end", rc.beta_end}}},
              {"stages", stages},
              {"data", data},
              {"bench",
               {{"B", rc.bench.B},
                {"f", rc.bench.f},
                {"s", rc.bench.s},
                {"d", rc.bench.d},
                {"L", rc.bench.L},
                {"n", rc.bench.n},
                {"flagship", rc.bench_flagship}}}};
}

void echo_resolved(const RunConfig& rc, const fs::path& out_dir) {
  write_text_file(out_dir / "config.resolved.json", resolved_json(rc).dump(2) + "\n");
}

// ---------------------------------------------------------------- gen-data

int cmd_gen_data(const fs::path& config_path, const fs::path& out, int count_override,
                 int64_t seed_override) {
  RunConfig rc = parse_run_config(config_path);
  if (count_override > 0) rc.data_count = count_override;
  if (seed_override >= 0) rc.seed = static_cast<uint64_t>(seed_override);
  echo_resolved(rc, out);

  auto samples = gen_dataset(rc.data, rc.data_count, rc.seed, rc.model.dtype);
  json manifest;
  manifest["count"] = rc.data_count;
  manifest["base_seed"] = rc.seed;
  manifest["scenario"] = scenario_to_json(rc.data);
  json names = json::array();
  for (int i = 0; i < rc.data_count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%03d", i);
    save_sample(out / name, samples[static_cast<size_t>(i)]);
    names.push_back(name);
  }
  manifest["samples"] = names;
  write_text_file(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << (out / "manifest.json").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

std::vector<TrainSample> load_dataset(const fs::path& dir, const ModelConfig& cfg,
                                      double lambda_bg) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("dataset manifest parse failed: " + std::string(e.what()));
  }
  std::vector<TrainSample> out;
  for (const auto& name : manifest.at("samples")) {
    SyntheticSample s = load_sample(dir / name.get<std::string>());
    out.push_back(make_train_sample(s, cfg, lambda_bg));
  }
  return out;
}

uint64_t frozen_hash(Denoiser& model, TrainStage stage) {
  std::vector<NamedParam> frozen;
  for (auto& p : model.parameters())
    if (!stage_trains_param(stage, p.name)) frozen.push_back(p);
  return hash_params(frozen);
}

int cmd_train(const fs::path& config_path, const fs::path& data_dir, const fs::path& out,
              const std::string& stage_arg, const fs::path& resume) {
  RunConfig rc = parse_run_config(config_path);
  echo_resolved(rc, out);

  std::vector<int> stages;
  if (stage_arg == "all")
    stages = {1, 2, 3};
  else if (stage_arg == "1" || stage_arg == "2" || stage_arg == "3")
    stages = {stage_arg[0] - '0'};
  else
    throw ConfigError("train: --stage must be 1, 2, 3 or all");

  Denoiser model = Denoiser::init(rc.model, rc.seed);
  AdamW opt({.lr = rc.stages[0].lr});
  CheckpointMeta meta;
  meta.beta_start = rc.beta_start;
  meta.beta_end = rc.beta_end;
  meta.run_seed = rc.seed;
  meta.lambda_bg = rc.lambda_bg;

  if (!resume.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(resume);
    if (model_config_to_json(loaded.model.cfg) != model_config_to_json(rc.model))
      throw ConfigError("train: checkpoint model config differs from --config");
    model = std::move(loaded.model);
    opt = std::move(loaded.opt);
    meta = loaded.meta;
  }
  if (stages.front() > meta.stage_completed + 1)
    throw StateError("train: stage " + std::to_string(stages.front()) + " requires stage " +
                     std::to_string(stages.front() - 1) + " to be complete (use --resume)");

  auto dataset = load_dataset(data_dir, rc.model, rc.lambda_bg);
  NoiseSchedule sched = NoiseSchedule::make(rc.model.T, rc.beta_start, rc.beta_end);

  std::string log;
  const fs::path log_path = out / "train_log.jsonl";
  if (!resume.empty() && fs::exists(log_path)) log = read_text_file(log_path);

  double first_initial = -1.0, last_final = -1.0;
  for (int stage_num : stages) {
    const auto stage = static_cast<TrainStage>(stage_num);
    const StageConfig& scfg = rc.stages[stage_num - 1];
    int64_t start_step = 0;
    if (meta.in_progress_stage == stage_num) start_step = meta.in_progress_step;
    if (meta.stage_completed >= stage_num) {
      std::cout << "stage " << stage_num << " already complete, skipping\n";
      continue;
    }

    const uint64_t before = frozen_hash(model, stage);
    std::printf("stage %d frozen-params hash before=0x%016" PRIx64 "\n", stage_num, before);

    const int64_t ckpt_every = std::max<int64_t>(25, scfg.steps / 10);
    StepSink sink = [&](const StepRecord& rec) {
      json line{{"stage", rec.stage}, {"step", rec.step}, {"t_mean", rec.t_mean},
                {"loss", rec.loss}};
      log += line.dump() + "\n";
      if ((rec.step + 1) % ckpt_every == 0 && rec.step + 1 < scfg.steps) {
        CheckpointMeta m = meta;
        m.in_progress_stage = rec.stage;
        m.in_progress_step = rec.step + 1;
        save_checkpoint(out / "ckpt_latest", model, opt, m);
        write_text_file(log_path, log);
      }
    };

    StageReport rep = run_stage(stage, scfg, dataset, model, opt, sched, rc.seed, start_step, sink);
    const uint64_t after = frozen_hash(model, stage);
    std::printf("stage %d frozen-params hash after=0x%016" PRIx64 "%s\n", stage_num, after,
                before == after ? "" : "  (MISMATCH)");
    if (before != after) throw ContractError("train: frozen parameters moved during the stage");

    if (first_initial < 0.0) first_initial = rep.initial_smoothed;
    last_final = rep.final_smoothed;
    std::printf("stage %d smoothed loss %.6f -> %.6f over %zu steps\n", stage_num,
                rep.initial_smoothed, rep.final_smoothed, rep.records.size());

    meta.stage_completed = stage_num;
    meta.in_progress_stage = 0;
    meta.in_progress_step = 0;
    save_checkpoint(out / ("ckpt_stage" + std::to_string(stage_num)), model, opt, meta);
    write_text_file(log_path, log);
  }

  if (first_initial < 0.0) return kExitOk;  // nothing ran
  std::printf("run smoothed loss %.6f -> %.6f\n", first_initial, last_final);
  return last_final < first_initial ? kExitOk : kExitContract;
}

// ---------------------------------------------------------------- sample

int cmd_sample(const fs::path& ckpt, const fs::path& sample_dir, const fs::path& out, int steps,
               uint64_t seed) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  Denoiser& model = loaded.model;
  SyntheticSample s = load_sample(sample_dir);
  TrainSample ts = make_train_sample(s, model.cfg, loaded.meta.lambda_bg);
  NoiseSchedule sched =
      NoiseSchedule::make(model.cfg.T, loaded.meta.beta_start, loaded.meta.beta_end);
  if (steps <= 0) steps = sched.T;

  Rng rng(seed);
  Tensor video = sample_video(model, ts.cond, ts.garment, ts.gather, sched, steps, rng);
  fs::create_directories(out);
  save_dten(out / "sampled.dten", video);
  save_frame_previews(out, "sampled", video);
  save_frame_previews(out, "gt", s.gt);

  json metrics;
  metrics["ssim"] = ssim(video.astype(DType::f64), s.gt.astype(DType::f64));
  metrics["psnr"] = psnr(video, s.gt);
  metrics["flicker"] = s.gt.dim(0) >= 2 ? temporal_flicker(video, s.gt) : 0.0;
  metrics["ssim_garment"] =
      region_ssim(video.astype(DType::f64), s.gt.astype(DType::f64), s.cond.m_c);
  write_text_file(out / "metrics.json", metrics.dump(2) + "\n");
  std::cout << metrics.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- bench

json flop_report_json(const FlopReport& r) {
  return json{{"attention_type", r.attention_type},
              {"B", r.B},
              {"f", r.f},
              {"s", r.s},
              {"d", r.d},
              {"L", r.L},
              {"n", r.n},
              {"measured_flops", r.measured_flops},
              {"analytic_flops", r.analytic_flops},
              {"peak_live_bytes", r.peak_live_bytes}};
}

int cmd_bench(const fs::path& config_path, const fs::path& out) {
  RunConfig rc = parse_run_config(config_path);
  echo_resolved(rc, out);

  auto reports = bench_attention(rc.bench, rc.seed);
  std::string jsonl;
  std::string csv = "attention_type,B,f,s,d,L,n,measured_flops,analytic_flops,peak_live_bytes\n";
  for (const auto& r : reports) {
    jsonl += flop_report_json(r).dump() + "\n";
    char row[256];
    std::snprintf(row, sizeof(row), "%s,%d,%d,%d,%d,%d,%d,%" PRIu64 ",%" PRIu64 ",%" PRIu64 "\n",
                  r.attention_type.c_str(), r.B, r.f, r.s, r.d, r.L, r.n, r.measured_flops,
                  r.analytic_flops, r.peak_live_bytes);
    csv += row;
  }
  write_text_file(out / "flops.jsonl", jsonl);
  write_text_file(out / "sweep.csv", csv);

  // doubling f must scale the score products by exactly x2/x4/x4/x1
  const int f0 = rc.bench.f.front(), s0 = rc.bench.s.front(), d0 = rc.bench.d.front();
  const int L0 = rc.bench.L.front(), n0 = rc.bench.n.front();
  auto flops = [&](const std::string& type, int f) {
    return measure_attention(type, 1, f, s0, d0, L0, n0, rc.seed).measured_flops;
  };
  const bool exponents_ok = flops("spatial", 2 * f0) == 2 * flops("spatial", f0) &&
                            flops("temporal", 2 * f0) == 4 * flops("temporal", f0) &&
                            flops("full3d", 2 * f0) == 4 * flops("full3d", f0) &&
                            flops("ldam", 2 * f0) == flops("ldam", f0);
  std::cout << "f-doubling exponents (x2 spatial, x4 temporal, x4 full3d, x1 ldam): "
            << (exponents_ok ? "ok" : "FAIL") << "\n";

  json summary;
  summary["exponents_ok"] = exponents_ok;
  bool ratio_ok = true;
  if (rc.bench_flagship) {
    // headline sparsity gap at L=4, n=12, f=36, s=192
    FlopReport full = measure_attention("full3d", 1, 36, 192, 8, 0, 0, rc.seed);
    FlopReport ldam = measure_attention("ldam", 1, 36, 192, 8, 4, 12, rc.seed);
    const uint64_t fs = 36ull * 192ull;
    ratio_ok = ldam.measured_flops * fs * fs == full.measured_flops * 4ull * 12ull * 12ull;
    const double ratio = static_cast<double>(ldam.measured_flops) /
                         static_cast<double>(full.measured_flops);
    summary["flagship"] = {{"ldam_flops", ldam.measured_flops},
                           {"full3d_flops", full.measured_flops},
                           {"ratio", ratio},
                           {"exact", ratio_ok}};
    std::printf("ldam/full3d score-flop ratio at (L=4,n=12,f=36,s=192): %.3e (%s)\n", ratio,
                ratio_ok ? "exact" : "FAIL");
  }

  ParamReport pr = param_report(rc.model);
  summary["params"] = {{"dffm_extra_params", pr.dffm_extra_params},
                       {"replica_encoder_params", pr.replica_encoder_params},
                       {"ratio", pr.ratio},
                       {"num_blocks", pr.num_blocks},
                       {"d", pr.d}};
  write_text_file(out / "params.jsonl", summary["params"].dump() + "\n");
  write_text_file(out / "summary.json", summary.dump(2) + "\n");
  return exponents_ok && ratio_ok ? kExitOk : kExitContract;
}

// ---------------------------------------------------------------- selftest

int cmd_selftest() {
  auto results = run_selftest();
  int failures = 0;
  for (const auto& r : results) {
    if (r.passed) {
      std::cout << "ok   " << r.name << "\n";
    } else {
      ++failures;
      std::cout << "FAIL " << r.name << ": " << r.detail << "\n";
    }
  }
  std::cout << results.size() - failures << "/" << results.size() << " oracles passed\n";
  return failures == 0 ? kExitOk : kExitContract;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale video try-on diffusion with garment fusion and limb attention"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, stage = "all", resume, ckpt, sample_dir;
  int count = 0, steps = 0;
  int64_t seed = -1;
  uint64_t sample_seed = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "run config JSON")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "override sample count");
  gen->add_option("--seed", seed, "override base seed");

  auto* train = app.add_subcommand("train", "run the staged training");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--stage", stage, "1, 2, 3 or all");
  train->add_option("--resume", resume, "checkpoint directory to continue from");

  auto* smp = app.add_subcommand("sample", "sample a video from a checkpoint");
  smp->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  smp->add_option("--data-sample", sample_dir, "sample directory")->required();
  smp->add_option("--out", out_dir, "output directory")->required();
  smp->add_option("--steps", steps, "sampling steps (default: full schedule)");
  smp->add_option("--seed", sample_seed, "sampling seed");

  auto* bench = app.add_subcommand("bench", "attention flop/memory sweeps");
  bench->add_option("--config", config_path, "run config JSON")->required();
  bench->add_option("--out", out_dir, "output directory")->required();

  app.add_subcommand("selftest", "run every cross-check oracle");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;  // bad flags are config errors
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir, count, seed);
    if (train->parsed()) return cmd_train(config_path, data_dir, out_dir, stage, resume);
    if (smp->parsed()) return cmd_sample(ckpt, sample_dir, out_dir, steps, sample_seed);
    if (bench->parsed()) return cmd_bench(config_path, out_dir);
    return cmd_selftest();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitContract;
  }
}
