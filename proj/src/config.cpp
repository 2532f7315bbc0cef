// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#include "genassets/config.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <set>

namespace ga {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  GA_CHECK(obj.is_object(), ConfigError, "config: '" + where + "' must be an object");
  for (const auto& [key, _] : obj.items())
    GA_CHECK(allowed.count(key) != 0, ConfigError,
             "config: unknown key '" + where + "." + key + "'");
}

template <class T>
void load_field(const json& obj, const std::string& where, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value type at '" + where + "." + key + "'");
  }
}

void parse_data(const json& j, DatasetSpec& d) {
  check_keys(j, "data",
             {"scenes", "actors_per_scene", "train_frames", "heldout_frames", "image_size",
              "lidar_azimuth", "lidar_elevation", "num_classes", "azimuth_range_deg",
              "night_fraction", "actor_drift"});
  load_field(j, "data", "scenes", d.scenes);
  load_field(j, "data", "actors_per_scene", d.actors_per_scene);
  load_field(j, "data", "train_frames", d.train_frames);
  load_field(j, "data", "heldout_frames", d.heldout_frames);
  load_field(j, "data", "image_size", d.image_size);
  load_field(j, "data", "lidar_azimuth", d.lidar_azimuth);
  load_field(j, "data", "lidar_elevation", d.lidar_elevation);
  load_field(j, "data", "num_classes", d.num_classes);
  load_field(j, "data", "azimuth_range_deg", d.azimuth_range_deg);
  load_field(j, "data", "night_fraction", d.night_fraction);
  load_field(j, "data", "actor_drift", d.actor_drift);
  GA_CHECK(d.scenes >= 1 && d.actors_per_scene >= 1 && d.train_frames >= 1, ConfigError,
           "config: data counts must be >= 1");
  GA_CHECK(d.heldout_frames >= 0, ConfigError, "config: data.heldout_frames must be >= 0");
  GA_CHECK(d.image_size >= 16 && d.image_size % 4 == 0, ConfigError,
           "config: data.image_size must be >= 16 and divisible by 4");
  GA_CHECK(d.lidar_azimuth >= 1 && d.lidar_elevation >= 1, ConfigError,
           "config: lidar pattern must be >= 1 in both axes");
  GA_CHECK(d.num_classes >= 1 && d.num_classes <= 8, ConfigError,
           "config: data.num_classes must be in [1, 8]");
  GA_CHECK(d.azimuth_range_deg > 10.f && d.azimuth_range_deg <= 180.f, ConfigError,
           "config: data.azimuth_range_deg must be in (10, 180]");
  GA_CHECK(d.night_fraction >= 0.f && d.night_fraction <= 1.f, ConfigError,
           "config: data.night_fraction must be in [0, 1]");
}

void parse_stage1(const json& j, Stage1Config& c) {
  check_keys(j, "stage1",
             {"actor_res", "background_res", "tp_channels", "latent_res", "latent_channels",
              "feature_dim", "head_hidden", "cnn_width", "cnn_kernel", "dir_freqs", "actor_repr",
              "fine_step", "coarse_step", "opacity_b", "occupancy_voxel", "feature_downsample",
              "lambda_lid", "lambda_kl", "lr_latent", "lr_decoder", "lr_fields", "lr_cnn",
              "lr_background", "lr_actor_triplane", "lr_sky", "steps", "lidar_rays_per_step",
              "checkpoint_every", "log_every"});
  load_field(j, "stage1", "actor_res", c.actor_res);
  load_field(j, "stage1", "background_res", c.background_res);
  load_field(j, "stage1", "tp_channels", c.tp_channels);
  load_field(j, "stage1", "latent_res", c.latent_res);
  load_field(j, "stage1", "latent_channels", c.latent_channels);
  load_field(j, "stage1", "feature_dim", c.feature_dim);
  load_field(j, "stage1", "head_hidden", c.head_hidden);
  load_field(j, "stage1", "cnn_width", c.cnn_width);
  load_field(j, "stage1", "cnn_kernel", c.cnn_kernel);
  load_field(j, "stage1", "dir_freqs", c.dir_freqs);
  if (j.contains("actor_repr")) {
    const std::string v = j.at("actor_repr").get<std::string>();
    GA_CHECK(v == "latent" || v == "triplane", ConfigError,
             "config: stage1.actor_repr must be 'latent' or 'triplane'");
    c.actor_repr = v == "latent" ? ActorRepr::kLatent : ActorRepr::kTriplane;
  }
  load_field(j, "stage1", "fine_step", c.fine_step);
  load_field(j, "stage1", "coarse_step", c.coarse_step);
  load_field(j, "stage1", "opacity_b", c.opacity_b);
  load_field(j, "stage1", "occupancy_voxel", c.occupancy_voxel);
  load_field(j, "stage1", "feature_downsample", c.feature_downsample);
  load_field(j, "stage1", "lambda_lid", c.lambda_lid);
  load_field(j, "stage1", "lambda_kl", c.lambda_kl);
  load_field(j, "stage1", "lr_latent", c.lr_latent);
  load_field(j, "stage1", "lr_decoder", c.lr_decoder);
  load_field(j, "stage1", "lr_fields", c.lr_fields);
  load_field(j, "stage1", "lr_cnn", c.lr_cnn);
  load_field(j, "stage1", "lr_background", c.lr_background);
  load_field(j, "stage1", "lr_actor_triplane", c.lr_actor_triplane);
  load_field(j, "stage1", "lr_sky", c.lr_sky);
  load_field(j, "stage1", "steps", c.steps);
  load_field(j, "stage1", "lidar_rays_per_step", c.lidar_rays_per_step);
  load_field(j, "stage1", "checkpoint_every", c.checkpoint_every);
  load_field(j, "stage1", "log_every", c.log_every);
  GA_CHECK(c.actor_res >= 2 && c.background_res >= 2, ConfigError,
           "config: triplane resolutions must be >= 2");
  GA_CHECK(c.tp_channels >= 1 && c.latent_channels >= 1 && c.feature_dim >= 1, ConfigError,
           "config: channel counts must be >= 1");
  GA_CHECK(c.latent_res >= 1 && c.actor_res % c.latent_res == 0, ConfigError,
           "config: stage1.actor_res must be a multiple of latent_res");
  const std::int64_t factor = c.actor_res / c.latent_res;
  GA_CHECK((factor & (factor - 1)) == 0, ConfigError,
           "config: decoder upsample factor must be a power of two");
  GA_CHECK(c.fine_step > 0.f && c.coarse_step >= c.fine_step, ConfigError,
           "config: step sizes must satisfy 0 < fine <= coarse");
  GA_CHECK(c.opacity_b > 0.f, ConfigError, "config: stage1.opacity_b must be positive");
  GA_CHECK(c.occupancy_voxel > 0.f, ConfigError, "config: stage1.occupancy_voxel must be positive");
  GA_CHECK(c.feature_downsample == 4, ConfigError,
           "config: stage1.feature_downsample must be 4 (two 2x upsampling stages)");
  GA_CHECK(c.steps >= 1, ConfigError, "config: stage1.steps must be >= 1");
  GA_CHECK(c.lidar_rays_per_step >= 0, ConfigError,
           "config: stage1.lidar_rays_per_step must be >= 0");
}

void parse_stage2(const json& j, Stage2Config& c) {
  check_keys(j, "stage2",
             {"schedule", "timesteps", "target", "conditional", "base_width", "steps", "batch",
              "lr", "cond_dropout", "snr_clip_weight", "log_every"});
  if (j.contains("schedule")) {
    const std::string v = j.at("schedule").get<std::string>();
    GA_CHECK(v == "linear" || v == "cosine", ConfigError,
             "config: stage2.schedule must be 'linear' or 'cosine'");
    c.schedule = v == "linear" ? ScheduleKind::kLinear : ScheduleKind::kCosine;
  }
  if (j.contains("target")) {
    const std::string v = j.at("target").get<std::string>();
    GA_CHECK(v == "epsilon" || v == "v", ConfigError,
             "config: stage2.target must be 'epsilon' or 'v'");
    c.target = v == "epsilon" ? PredictionTarget::kEpsilon : PredictionTarget::kV;
  }
  load_field(j, "stage2", "timesteps", c.timesteps);
  load_field(j, "stage2", "conditional", c.conditional);
  load_field(j, "stage2", "base_width", c.base_width);
  load_field(j, "stage2", "steps", c.steps);
  load_field(j, "stage2", "batch", c.batch);
  load_field(j, "stage2", "lr", c.lr);
  load_field(j, "stage2", "cond_dropout", c.cond_dropout);
  load_field(j, "stage2", "snr_clip_weight", c.snr_clip_weight);
  load_field(j, "stage2", "log_every", c.log_every);
  GA_CHECK(c.timesteps >= 1, ConfigError, "config: stage2.timesteps must be >= 1");
  GA_CHECK(c.steps >= 1 && c.batch >= 1, ConfigError,
           "config: stage2.steps and batch must be >= 1");
  GA_CHECK(c.lr > 0, ConfigError, "config: stage2.lr must be positive");
  GA_CHECK(c.cond_dropout >= 0 && c.cond_dropout <= 1, ConfigError,
           "config: stage2.cond_dropout must be in [0, 1]");
}

void parse_guidance(const json& j, GuidanceConfig& g) {
  check_keys(j, "guidance", {"cfg_weight", "cond_dropout", "render_weight", "ray_budget"});
  load_field(j, "guidance", "cfg_weight", g.cfg_weight);
  load_field(j, "guidance", "cond_dropout", g.cond_dropout);
  load_field(j, "guidance", "render_weight", g.render_weight);
  load_field(j, "guidance", "ray_budget", g.ray_budget);
  try {
    g.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("config: guidance: ") + e.what());
  }
}

void parse_sampling(const json& j, SamplingDefaults& s) {
  check_keys(j, "sampling", {"solver", "steps", "eta", "count"});
  if (j.contains("solver")) {
    const std::string v = j.at("solver").get<std::string>();
    GA_CHECK(v == "ddim" || v == "ddpm", ConfigError,
             "config: sampling.solver must be 'ddim' or 'ddpm'");
    s.solver = v == "ddim" ? Solver::kDdim : Solver::kDdpm;
  }
  load_field(j, "sampling", "steps", s.steps);
  load_field(j, "sampling", "eta", s.eta);
  load_field(j, "sampling", "count", s.count);
  GA_CHECK(s.steps >= 1, ConfigError, "config: sampling.steps must be >= 1");
  GA_CHECK(s.count >= 1, ConfigError, "config: sampling.count must be >= 1");
  GA_CHECK(s.eta >= 0, ConfigError, "config: sampling.eta must be >= 0");
}

RunConfig parse_config(const json& j) {
  RunConfig cfg;
  check_keys(j, "<root>",
             {"seed", "threads", "data_dir", "data", "stage1", "stage2", "guidance", "sampling"});
  load_field(j, "<root>", "seed", cfg.seed);
  load_field(j, "<root>", "threads", cfg.threads);
  load_field(j, "<root>", "data_dir", cfg.data_dir);
  GA_CHECK(cfg.threads >= 1, ConfigError, "config: threads must be >= 1");
  if (j.contains("data")) parse_data(j.at("data"), cfg.data);
  if (j.contains("stage1")) parse_stage1(j.at("stage1"), cfg.stage1);
  if (j.contains("stage2")) parse_stage2(j.at("stage2"), cfg.stage2);
  if (j.contains("guidance")) parse_guidance(j.at("guidance"), cfg.guidance);
  if (j.contains("sampling")) parse_sampling(j.at("sampling"), cfg.sampling);
  cfg.data.seed = cfg.seed;  // dataset generation derives from the root seed
  if (cfg.data_dir.empty()) {
    const char* env = std::getenv("GENASSETS_DATA_DIR");
    cfg.data_dir = env && *env ? env : "./artifacts";
  }
  cfg.stage1.num_classes = cfg.data.num_classes;
  return cfg;
}

json apply_override(json j, const std::string& spec) {
  const auto eq = spec.find('=');
  GA_CHECK(eq != std::string::npos && eq > 0, ConfigError,
           "override must look like key.path=value: " + spec);
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    GA_CHECK(!key.empty(), ConfigError, "override has an empty path segment: " + spec);
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
  return j;
}

}  // namespace

RunConfig default_run_config() { return parse_config(json::object()); }

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    GA_CHECK(is.good(), ConfigError, "config file not found: " + path);
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config parse error in " + path + ": " + e.what());
    }
  }
  for (const auto& ov : overrides) j = apply_override(std::move(j), ov);
  return parse_config(j);
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["data_dir"] = cfg.data_dir;
  j["data"] = {{"scenes", cfg.data.scenes},
               {"actors_per_scene", cfg.data.actors_per_scene},
               {"train_frames", cfg.data.train_frames},
               {"heldout_frames", cfg.data.heldout_frames},
               {"image_size", cfg.data.image_size},
               {"lidar_azimuth", cfg.data.lidar_azimuth},
               {"lidar_elevation", cfg.data.lidar_elevation},
               {"num_classes", cfg.data.num_classes},
               {"azimuth_range_deg", cfg.data.azimuth_range_deg},
               {"night_fraction", cfg.data.night_fraction},
               {"actor_drift", cfg.data.actor_drift}};
  j["stage1"] = {{"actor_res", cfg.stage1.actor_res},
                 {"background_res", cfg.stage1.background_res},
                 {"tp_channels", cfg.stage1.tp_channels},
                 {"latent_res", cfg.stage1.latent_res},
                 {"latent_channels", cfg.stage1.latent_channels},
                 {"feature_dim", cfg.stage1.feature_dim},
                 {"head_hidden", cfg.stage1.head_hidden},
                 {"cnn_width", cfg.stage1.cnn_width},
                 {"cnn_kernel", cfg.stage1.cnn_kernel},
                 {"dir_freqs", cfg.stage1.dir_freqs},
                 {"actor_repr", cfg.stage1.actor_repr == ActorRepr::kLatent ? "latent" : "triplane"},
                 {"fine_step", cfg.stage1.fine_step},
                 {"coarse_step", cfg.stage1.coarse_step},
                 {"opacity_b", cfg.stage1.opacity_b},
                 {"occupancy_voxel", cfg.stage1.occupancy_voxel},
                 {"feature_downsample", cfg.stage1.feature_downsample},
                 {"lambda_lid", cfg.stage1.lambda_lid},
                 {"lambda_kl", cfg.stage1.lambda_kl},
                 {"lr_latent", cfg.stage1.lr_latent},
                 {"lr_decoder", cfg.stage1.lr_decoder},
                 {"lr_fields", cfg.stage1.lr_fields},
                 {"lr_cnn", cfg.stage1.lr_cnn},
                 {"lr_background", cfg.stage1.lr_background},
                 {"lr_actor_triplane", cfg.stage1.lr_actor_triplane},
                 {"lr_sky", cfg.stage1.lr_sky},
                 {"steps", cfg.stage1.steps},
                 {"lidar_rays_per_step", cfg.stage1.lidar_rays_per_step},
                 {"checkpoint_every", cfg.stage1.checkpoint_every},
                 {"log_every", cfg.stage1.log_every}};
  j["stage2"] = {{"schedule", cfg.stage2.schedule == ScheduleKind::kLinear ? "linear" : "cosine"},
                 {"timesteps", cfg.stage2.timesteps},
                 {"target", cfg.stage2.target == PredictionTarget::kEpsilon ? "epsilon" : "v"},
                 {"conditional", cfg.stage2.conditional},
                 {"base_width", cfg.stage2.base_width},
                 {"steps", cfg.stage2.steps},
                 {"batch", cfg.stage2.batch},
                 {"lr", cfg.stage2.lr},
                 {"cond_dropout", cfg.stage2.cond_dropout},
                 {"snr_clip_weight", cfg.stage2.snr_clip_weight},
                 {"log_every", cfg.stage2.log_every}};
  j["guidance"] = {{"cfg_weight", cfg.guidance.cfg_weight},
                   {"cond_dropout", cfg.guidance.cond_dropout},
                   {"render_weight", cfg.guidance.render_weight},
                   {"ray_budget", cfg.guidance.ray_budget}};
  j["sampling"] = {{"solver", cfg.sampling.solver == Solver::kDdim ? "ddim" : "ddpm"},
                   {"steps", cfg.sampling.steps},
                   {"eta", cfg.sampling.eta},
                   {"count", cfg.sampling.count}};
  return j.dump(2);
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  GA_CHECK(is.good(), IoError, "cannot hash missing file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return content_hash(bytes);
}

}  // namespace ga
