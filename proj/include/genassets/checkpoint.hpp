// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints: a tensor container holding every trainable parameter by its
// registry name, plus a JSON sidecar (<path>.json) carrying the config and
// whatever structure is needed to rebuild the model without the dataset.
#pragma once

#include <json.hpp>

#include <fstream>

#include "genassets/diffusion.hpp"

namespace ga {

namespace detail {

inline nlohmann::json stage1_config_to_json(const Stage1Config& c) {
  return nlohmann::json{{"actor_res", c.actor_res},
                        {"background_res", c.background_res},
                        {"tp_channels", c.tp_channels},
                        {"latent_res", c.latent_res},
                        {"latent_channels", c.latent_channels},
                        {"feature_dim", c.feature_dim},
                        {"head_hidden", c.head_hidden},
                        {"cnn_width", c.cnn_width},
                        {"cnn_kernel", c.cnn_kernel},
                        {"dir_freqs", c.dir_freqs},
                        {"num_classes", c.num_classes},
                        {"actor_repr", c.actor_repr == ActorRepr::kLatent ? "latent" : "triplane"},
                        {"fine_step", c.fine_step},
                        {"coarse_step", c.coarse_step},
                        {"opacity_b", c.opacity_b},
                        {"occupancy_voxel", c.occupancy_voxel},
                        {"feature_downsample", c.feature_downsample},
                        {"lambda_lid", c.lambda_lid},
                        {"lambda_kl", c.lambda_kl},
                        {"lr_latent", c.lr_latent},
                        {"lr_decoder", c.lr_decoder},
                        {"lr_fields", c.lr_fields},
                        {"lr_cnn", c.lr_cnn},
                        {"lr_background", c.lr_background},
                        {"lr_actor_triplane", c.lr_actor_triplane},
                        {"lr_sky", c.lr_sky},
                        {"steps", c.steps},
                        {"lidar_rays_per_step", c.lidar_rays_per_step},
                        {"checkpoint_every", c.checkpoint_every},
                        {"log_every", c.log_every}};
}

inline Stage1Config stage1_config_from_json(const nlohmann::json& j) {
  Stage1Config c;
  c.actor_res = j.at("actor_res").get<std::int64_t>();
  c.background_res = j.at("background_res").get<std::int64_t>();
  c.tp_channels = j.at("tp_channels").get<std::int64_t>();
  c.latent_res = j.at("latent_res").get<std::int64_t>();
  c.latent_channels = j.at("latent_channels").get<std::int64_t>();
  c.feature_dim = j.at("feature_dim").get<std::int64_t>();
  c.head_hidden = j.at("head_hidden").get<std::int64_t>();
  c.cnn_width = j.at("cnn_width").get<std::int64_t>();
  c.cnn_kernel = j.at("cnn_kernel").get<std::int64_t>();
  c.dir_freqs = j.at("dir_freqs").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.actor_repr =
      j.at("actor_repr").get<std::string>() == "latent" ? ActorRepr::kLatent : ActorRepr::kTriplane;
  c.fine_step = j.at("fine_step").get<float>();
  c.coarse_step = j.at("coarse_step").get<float>();
  c.opacity_b = j.at("opacity_b").get<float>();
  c.occupancy_voxel = j.at("occupancy_voxel").get<float>();
  c.feature_downsample = j.at("feature_downsample").get<int>();
  c.lambda_lid = j.at("lambda_lid").get<double>();
  c.lambda_kl = j.at("lambda_kl").get<double>();
  c.lr_latent = j.at("lr_latent").get<double>();
  c.lr_decoder = j.at("lr_decoder").get<double>();
  c.lr_fields = j.at("lr_fields").get<double>();
  c.lr_cnn = j.at("lr_cnn").get<double>();
  c.lr_background = j.at("lr_background").get<double>();
  c.lr_actor_triplane = j.at("lr_actor_triplane").get<double>();
  c.lr_sky = j.at("lr_sky").get<double>();
  c.steps = j.at("steps").get<int>();
  c.lidar_rays_per_step = j.at("lidar_rays_per_step").get<int>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  c.log_every = j.at("log_every").get<int>();
  return c;
}

inline void write_sidecar(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path + ".json");
  GA_CHECK(os.good(), IoError, "cannot write checkpoint sidecar: " + path + ".json");
  os << j.dump(2) << "\n";
}

inline nlohmann::json read_sidecar(const std::string& path) {
  std::ifstream is(path + ".json");
  GA_CHECK(is.good(), MissingPrerequisite, "checkpoint sidecar not found: " + path + ".json");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint sidecar parse error: " + std::string(e.what()));
  }
  return j;
}

}  // namespace detail

inline void save_stage1(const std::string& path, Stage1Model<float>& model, int step,
                        const std::vector<TrainLogEntry>& history) {
  std::map<std::string, Tensorf> entries;
  auto reg = model.registry();
  for (const auto& e : reg.entries()) entries[e.name] = *e.tensor;
  write_container(path, entries);

  nlohmann::json j;
  j["kind"] = "stage1";
  j["config"] = detail::stage1_config_to_json(model.cfg);
  j["step"] = step;
  nlohmann::json actors = nlohmann::json::array();
  for (std::size_t i = 0; i < model.actor_class.size(); ++i)
    actors.push_back(nlohmann::json{
        {"class_id", model.actor_class[i]},
        {"extent",
         {model.actor_extent[i].x(), model.actor_extent[i].y(), model.actor_extent[i].z()}}});
  j["actors"] = actors;
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& bg : model.backgrounds)
    scenes.push_back(nlohmann::json{{"extent", {bg.extent.x(), bg.extent.y(), bg.extent.z()}}});
  j["scenes"] = scenes;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : history)
    hist.push_back(nlohmann::json{
        {"step", h.step}, {"total", h.loss.total}, {"rgb", h.loss.rgb}, {"lid", h.loss.lid},
        {"kl", h.loss.kl}});
  j["loss_history"] = hist;
  detail::write_sidecar(path, j);
}

inline Stage1Model<float> load_stage1(const std::string& path) {
  {
    std::ifstream probe(path, std::ios::binary);
    GA_CHECK(probe.good(), MissingPrerequisite, "checkpoint not found: " + path);
  }
  const nlohmann::json j = detail::read_sidecar(path);
  GA_CHECK(j.value("kind", "") == "stage1", IoError, "not a stage-1 checkpoint: " + path);
  const Stage1Config cfg = detail::stage1_config_from_json(j.at("config"));

  Stage1Model<float> m;
  m.cfg = cfg;
  Rng rng(0);  // structural init only; values are overwritten below
  m.decoder = AssetDecoder<float>(cfg.latent_res, cfg.latent_channels, cfg.actor_res,
                                  cfg.tp_channels, rng);
  m.head = FieldHead<float>(3 * cfg.tp_channels, cfg.head_hidden, cfg.feature_dim, rng,
                            cfg.dir_freqs);
  m.cnn = RgbCnn<float>(cfg.feature_dim, cfg.cnn_width, cfg.cnn_kernel, rng);
  m.sky = Tensorf::zeros({cfg.feature_dim});
  for (int c = 0; c < cfg.num_classes; ++c)
    m.class_embs.push_back(Tensorf::zeros({cfg.latent_res, cfg.latent_res, cfg.latent_channels}));
  for (const auto& aj : j.at("actors")) {
    m.actor_class.push_back(aj.at("class_id").get<int>());
    const auto& e = aj.at("extent");
    m.actor_extent.push_back(Vec3f(e[0].get<float>(), e[1].get<float>(), e[2].get<float>()));
    m.latents.push_back(LatentCode<float>{
        Tensorf::zeros({cfg.latent_res, cfg.latent_res, cfg.latent_channels}),
        Tensorf::zeros({cfg.latent_res, cfg.latent_res, cfg.latent_channels})});
    if (cfg.actor_repr == ActorRepr::kTriplane)
      m.actor_planes.push_back(
          TriPlane<float>::zeros(cfg.actor_res, cfg.tp_channels, m.actor_extent.back()));
  }
  for (const auto& sj : j.at("scenes")) {
    const auto& e = sj.at("extent");
    m.backgrounds.push_back(TriPlane<float>::zeros(
        cfg.background_res, cfg.tp_channels,
        Vec3f(e[0].get<float>(), e[1].get<float>(), e[2].get<float>())));
  }

  auto entries = read_container(path);
  auto reg = m.registry();
  for (auto& e : reg.entries()) {
    auto it = entries.find(e.name);
    GA_CHECK(it != entries.end(), IoError, "checkpoint missing tensor: " + e.name);
    GA_CHECK(it->second.shape() == e.tensor->shape(), ShapeError,
             "checkpoint shape mismatch for " + e.name);
    *e.tensor = it->second;
  }
  return m;
}

inline void save_stage2(const std::string& path, Denoiser<float>& den, const NoiseSchedule& sched,
                        const Stage2Config& cfg, double latent_scale,
                        const std::vector<std::pair<int, double>>& history) {
  std::map<std::string, Tensorf> entries;
  ParamRegistry<float> reg;
  den.params(reg, "denoiser/net", 0);
  for (const auto& e : reg.entries()) entries[e.name] = *e.tensor;
  write_container(path, entries);

  nlohmann::json j;
  j["kind"] = "stage2";
  j["schedule"] = sched.kind == ScheduleKind::kLinear ? "linear" : "cosine";
  j["timesteps"] = sched.steps;
  j["target"] = den.target == PredictionTarget::kEpsilon ? "epsilon" : "v";
  j["conditional"] = cfg.conditional;
  j["num_classes"] = den.num_classes;
  j["latent_res"] = den.latent_res;
  j["latent_channels"] = den.latent_channels;
  j["base_width"] = cfg.base_width;
  j["latent_scale"] = latent_scale;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& [s, l] : history) hist.push_back(nlohmann::json{{"step", s}, {"loss", l}});
  j["loss_history"] = hist;
  detail::write_sidecar(path, j);
}

struct Stage2Checkpoint {
  Denoiser<float> denoiser;
  NoiseSchedule schedule;
  Stage2Config config;
  double latent_scale = 1.0;
};

inline Stage2Checkpoint load_stage2(const std::string& path) {
  {
    std::ifstream probe(path, std::ios::binary);
    GA_CHECK(probe.good(), MissingPrerequisite, "checkpoint not found: " + path);
  }
  const nlohmann::json j = detail::read_sidecar(path);
  GA_CHECK(j.value("kind", "") == "stage2", IoError, "not a stage-2 checkpoint: " + path);
  Stage2Checkpoint ck;
  ck.config.schedule =
      j.at("schedule").get<std::string>() == "linear" ? ScheduleKind::kLinear : ScheduleKind::kCosine;
  ck.config.timesteps = j.at("timesteps").get<int>();
  ck.config.target =
      j.at("target").get<std::string>() == "epsilon" ? PredictionTarget::kEpsilon : PredictionTarget::kV;
  ck.config.conditional = j.at("conditional").get<bool>();
  ck.config.base_width = j.at("base_width").get<std::int64_t>();
  ck.latent_scale = j.at("latent_scale").get<double>();
  ck.schedule = make_schedule(ck.config.schedule, ck.config.timesteps);

  Rng rng(0);
  ck.denoiser = Denoiser<float>(j.at("latent_res").get<std::int64_t>(),
                                j.at("latent_channels").get<std::int64_t>(),
                                j.at("num_classes").get<int>(), ck.config.target, rng,
                                ck.config.base_width);
  auto entries = read_container(path);
  ParamRegistry<float> reg;
  ck.denoiser.params(reg, "denoiser/net", 0);
  for (auto& e : reg.entries()) {
    auto it = entries.find(e.name);
    GA_CHECK(it != entries.end(), IoError, "checkpoint missing tensor: " + e.name);
    GA_CHECK(it->second.shape() == e.tensor->shape(), ShapeError,
             "checkpoint shape mismatch for " + e.name);
    *e.tensor = it->second;
  }
  return ck;
}

}  // namespace ga
