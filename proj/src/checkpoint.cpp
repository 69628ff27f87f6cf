#include "tryon/checkpoint.hpp"

#include <cstring>

#include "tryon/io.hpp"

namespace tryon {

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["f"] = cfg.f;
  j["h"] = cfg.h;
  j["w"] = cfg.w;
  j["cz"] = cfg.cz;
  j["p"] = cfg.p;
  j["d"] = cfg.d;
  j["heads"] = cfg.heads;
  j["num_blocks"] = cfg.num_blocks;
  j["L"] = cfg.L;
  j["n_cap"] = cfg.n_cap;
  j["T"] = cfg.T;
  j["limb_radius"] = cfg.limb_radius;
  j["enable_dffm"] = cfg.enable_dffm;
  j["ldam_blocks"] = cfg.ldam_blocks;
  j["precision"] = dtype_name(cfg.dtype);
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.f = j.at("f").get<int>();
  cfg.h = j.at("h").get<int>();
  cfg.w = j.at("w").get<int>();
  cfg.cz = j.at("cz").get<int>();
  cfg.p = j.at("p").get<int>();
  cfg.d = j.at("d").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.num_blocks = j.at("num_blocks").get<int>();
  cfg.L = j.at("L").get<int>();
  cfg.n_cap = j.at("n_cap").get<int>();
  cfg.T = j.at("T").get<int>();
  cfg.limb_radius = j.at("limb_radius").get<int>();
  cfg.enable_dffm = j.at("enable_dffm").get<bool>();
  cfg.ldam_blocks = j.at("ldam_blocks").get<std::vector<uint8_t>>();
  const std::string prec = j.at("precision").get<std::string>();
  if (prec != "f32" && prec != "f64") throw ConfigError("config: precision must be f32 or f64");
  cfg.dtype = prec == "f32" ? DType::f32 : DType::f64;
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::filesystem::path& dir, const Denoiser& model, const AdamW& opt,
                     const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir / "params");
  nlohmann::json j;
  j["format_version"] = 1;
  j["model"] = model_config_to_json(model.cfg);
  j["schedule"] = {{"beta_start", meta.beta_start}, {"beta_end", meta.beta_end}};
  j["stage_completed"] = meta.stage_completed;
  j["in_progress_stage"] = meta.in_progress_stage;
  j["in_progress_step"] = meta.in_progress_step;
  j["run_seed"] = meta.run_seed;
  j["lambda_bg"] = meta.lambda_bg;

  nlohmann::json params = nlohmann::json::object();
  for (const auto& p : model.parameters()) {
    const std::string file = "params/" + p.name + ".dten";
    save_dten(dir / file, p.tensor);
    params[p.name] = file;
  }
  j["params"] = params;

  const auto& cfg = opt.config();
  nlohmann::json oj;
  oj["lr"] = cfg.lr;
  oj["beta1"] = cfg.beta1;
  oj["beta2"] = cfg.beta2;
  oj["eps"] = cfg.eps;
  oj["weight_decay"] = cfg.weight_decay;
  nlohmann::json slots = nlohmann::json::object();
  std::filesystem::create_directories(dir / "opt");
  for (const auto& [name, st] : opt.state()) {
    const std::string mfile = "opt/" + name + ".m.dten";
    const std::string vfile = "opt/" + name + ".v.dten";
    save_dten(dir / mfile, st.m);
    save_dten(dir / vfile, st.v);
    slots[name] = {{"m", mfile}, {"v", vfile}, {"step", st.step}};
  }
  oj["slots"] = slots;
  j["opt"] = oj;

  write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint manifest parse failed: " + std::string(e.what()));
  }
  if (j.at("format_version").get<int>() != 1) throw IoError("checkpoint: unknown format version");

  ModelConfig cfg = model_config_from_json(j.at("model"));
  Denoiser model = Denoiser::init(cfg, 0);
  const auto& params = j.at("params");
  auto live = model.parameters();
  if (params.size() != live.size()) throw IoError("checkpoint: parameter set mismatch");
  for (auto& p : live) {
    if (!params.contains(p.name)) throw IoError("checkpoint: missing parameter " + p.name);
    Tensor loaded = load_dten(dir / params.at(p.name).get<std::string>());
    if (loaded.shape() != p.tensor.shape() || loaded.dtype() != p.tensor.dtype())
      throw IoError("checkpoint: shape mismatch for " + p.name);
    std::memcpy(p.tensor.impl().buf.data(), loaded.impl().buf.data(), loaded.impl().buf.size());
  }

  const auto& oj = j.at("opt");
  AdamWConfig ocfg;
  ocfg.lr = oj.at("lr").get<double>();
  ocfg.beta1 = oj.at("beta1").get<double>();
  ocfg.beta2 = oj.at("beta2").get<double>();
  ocfg.eps = oj.at("eps").get<double>();
  ocfg.weight_decay = oj.at("weight_decay").get<double>();
  AdamW opt(ocfg);
  for (const auto& [name, slot] : oj.at("slots").items()) {
    AdamW::ParamState st;
    st.m = load_dten(dir / slot.at("m").get<std::string>());
    st.v = load_dten(dir / slot.at("v").get<std::string>());
    st.step = slot.at("step").get<int64_t>();
    opt.state().emplace(name, std::move(st));
  }

  CheckpointMeta meta;
  meta.beta_start = j.at("schedule").at("beta_start").get<double>();
  meta.beta_end = j.at("schedule").at("beta_end").get<double>();
  meta.stage_completed = j.at("stage_completed").get<int>();
  meta.in_progress_stage = j.at("in_progress_stage").get<int>();
  meta.in_progress_step = j.at("in_progress_step").get<int64_t>();
  meta.run_seed = j.at("run_seed").get<uint64_t>();
  meta.lambda_bg = j.at("lambda_bg").get<double>();
  return LoadedCheckpoint(std::move(model), std::move(opt), meta);
}

}  // namespace tryon
