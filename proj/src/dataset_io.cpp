// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#include "genassets/synthdata.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

#include "genassets/image_io.hpp"
#include "genassets/ply_io.hpp"
#include "genassets/tensor_io.hpp"

namespace ga {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr float kPi = 3.14159265358979323846f;

json vec3_to_json(const Vec3f& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3f vec3_from_json(const json& j) {
  GA_CHECK(j.is_array() && j.size() == 3, IoError, "expected 3-vector in JSON");
  return Vec3f(j[0].get<float>(), j[1].get<float>(), j[2].get<float>());
}

json pose_to_json(const SE3Posef& p) {
  json r = json::array();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.push_back(p.R(i, k));
  return json{{"r", r}, {"t", vec3_to_json(p.t)}};
}

SE3Posef pose_from_json(const json& j) {
  SE3Posef p;
  const auto& r = j.at("r");
  GA_CHECK(r.is_array() && r.size() == 9, IoError, "expected 3x3 rotation in JSON");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) p.R(i, k) = r[static_cast<std::size_t>(i * 3 + k)].get<float>();
  p.t = vec3_from_json(j.at("t"));
  return p;
}

json primitive_to_json(const Primitive& prim) {
  return json{{"shape", static_cast<int>(prim.shape)},
              {"dims", vec3_to_json(prim.dims)},
              {"round", prim.round},
              {"albedo", vec3_to_json(prim.albedo)},
              {"albedo_top", vec3_to_json(prim.albedo_top)},
              {"pose", pose_to_json(prim.pose)}};
}

Primitive primitive_from_json(const json& j) {
  Primitive prim;
  prim.shape = static_cast<PrimShape>(j.at("shape").get<int>());
  prim.dims = vec3_from_json(j.at("dims"));
  prim.round = j.at("round").get<float>();
  prim.albedo = vec3_from_json(j.at("albedo"));
  prim.albedo_top = vec3_from_json(j.at("albedo_top"));
  prim.pose = pose_from_json(j.at("pose"));
  return prim;
}

std::string frame_name(int f) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "f%03d", f);
  return buf;
}

std::string scene_dir_name(int s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%03d", s);
  return buf;
}

}  // namespace

SyntheticDataset make_dataset(const DatasetSpec& spec) {
  GA_CHECK(spec.scenes >= 1 && spec.actors_per_scene >= 1 && spec.train_frames >= 1, ValueError,
           "dataset spec counts must be >= 1");
  GA_CHECK(spec.num_classes >= 1, ValueError, "dataset spec needs >= 1 class");
  GA_CHECK(spec.azimuth_range_deg > 10.f && spec.azimuth_range_deg <= 180.f, ValueError,
           "azimuth range must be in (10, 180] degrees");

  SyntheticDataset ds;
  ds.spec = spec;
  for (int c = 0; c < spec.num_classes; ++c)
    ds.class_canonical_half.push_back(synth::class_base_half(c));

  const bool constrained = spec.azimuth_range_deg < 179.f;
  const float az_limit = spec.azimuth_range_deg * kPi / 180.f;
  int next_global_id = 0;

  for (int si = 0; si < spec.scenes; ++si) {
    Rng rng = Rng::child(spec.seed, {static_cast<std::uint64_t>(SeedPurpose::kData),
                                     static_cast<std::uint64_t>(si)});
    SceneRecord rec;
    rec.desc.name = scene_dir_name(si);
    rec.desc.bounds_center = Vec3f(0.f, 0.f, 1.5f);
    rec.desc.bounds.half = Vec3f(10.f, 10.f, 2.5f);
    rec.desc.condition_tod = rng.uniform() < spec.night_fraction ? 1 : 0;
    rec.gt.illum = rec.desc.condition_tod == 1 ? 0.25f : 1.f;

    // Static background: ground slab plus two pillars near the rim.
    Primitive ground;
    ground.shape = PrimShape::kBox;
    ground.dims = Vec3f(9.8f, 9.8f, 0.1f);
    ground.pose.t = Vec3f(0.f, 0.f, -0.1f);
    ground.albedo = Vec3f(0.33f, 0.36f, 0.30f);
    ground.albedo_top = ground.albedo;
    rec.gt.background.push_back(ground);
    for (int p = 0; p < 2; ++p) {
      Primitive pillar;
      pillar.shape = PrimShape::kBox;
      pillar.dims = Vec3f(0.4f, 0.4f, 1.0f);
      const float ang = static_cast<float>(rng.uniform(0.0, 2.0 * kPi));
      const float rad = static_cast<float>(rng.uniform(5.8, 7.2));
      pillar.pose.t = Vec3f(rad * std::cos(ang), rad * std::sin(ang), 1.0f);
      pillar.albedo = Vec3f(0.45f, 0.30f, 0.22f);
      pillar.albedo_top = pillar.albedo * 0.7f;
      rec.gt.background.push_back(pillar);
    }

    // Sensor trajectory: an orbit segment (full circle when unconstrained).
    const int total_frames = spec.train_frames + spec.heldout_frames;
    std::vector<float> angles(static_cast<std::size_t>(total_frames));
    if (!constrained) {
      for (int f = 0; f < total_frames; ++f)
        angles[static_cast<std::size_t>(f)] = 2.f * kPi * static_cast<float>(f) /
                                              static_cast<float>(total_frames);
    } else {
      // Train views on a front arc, held-out views on the opposite arc.
      const float arc = std::max(20.f, spec.azimuth_range_deg - 30.f) * kPi / 180.f;
      for (int f = 0; f < spec.train_frames; ++f) {
        const float s = spec.train_frames == 1
                            ? 0.5f
                            : static_cast<float>(f) / static_cast<float>(spec.train_frames - 1);
        angles[static_cast<std::size_t>(f)] = -arc + 2.f * arc * s;
      }
      for (int f = 0; f < spec.heldout_frames; ++f) {
        const float s = spec.heldout_frames == 1
                            ? 0.5f
                            : static_cast<float>(f) / static_cast<float>(spec.heldout_frames - 1);
        angles[static_cast<std::size_t>(spec.train_frames + f)] = kPi - arc + 2.f * arc * s;
      }
    }
    rec.splits.resize(static_cast<std::size_t>(total_frames));
    for (int f = 0; f < total_frames; ++f) {
      bool heldout = f >= spec.train_frames;
      if (!constrained && spec.heldout_frames > 0) {
        // Unconstrained orbits interleave held-out frames instead.
        heldout = (f % std::max(2, total_frames / std::max(1, spec.heldout_frames))) == 1 &&
                  std::count_if(rec.splits.begin(), rec.splits.begin() + f,
                                [](const FrameSplit& s) { return s.heldout; }) <
                      spec.heldout_frames;
      }
      rec.splits[static_cast<std::size_t>(f)].heldout = heldout;
    }

    auto& rig = rec.desc.rig;
    rig.camera.width = spec.image_size;
    rig.camera.height = spec.image_size;
    rig.camera.focal_px = 0.9f * static_cast<float>(spec.image_size);
    rig.camera.cx = static_cast<float>(spec.image_size) / 2.f;
    rig.camera.cy = static_cast<float>(spec.image_size) / 2.f;
    rig.lidar.n_azimuth = spec.lidar_azimuth;
    rig.lidar.n_elevation = spec.lidar_elevation;
    rig.lidar.elevation_min = -0.42f;
    rig.lidar.elevation_max = 0.10f;
    rig.ray_near = 0.1f;
    rig.ray_far = 40.f;
    const Vec3f look_target(0.f, 0.f, 0.5f);
    for (int f = 0; f < total_frames; ++f) {
      const float ang = angles[static_cast<std::size_t>(f)];
      const Vec3f eye(synth::kOrbitRadius * std::cos(ang), synth::kOrbitRadius * std::sin(ang),
                      synth::kSensorHeight);
      const SE3Posef cam = synth::look_at(eye, look_target);
      SE3Posef lid;
      lid.R = cam.R * synth::cam_from_lidar();
      lid.t = cam.t;
      rig.camera_poses.push_back(cam);
      rig.lidar_poses.push_back(lid);
      rig.frame_times.push_back(0.5f * static_cast<float>(f));
    }
    const float t_end = rig.frame_times.back();

    // Actor placement with bounded retries: no box interpenetration, and in
    // constrained datasets every train view must stay inside the allowed
    // azimuth window of every actor.
    struct Placed {
      Vec3f pos;
      float circum;
      Vec3f drift;
    };
    std::vector<Placed> placed;
    for (int ai = 0; ai < spec.actors_per_scene; ++ai) {
      bool ok = false;
      for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        const int class_id = static_cast<int>(rng.uniform_int(0, spec.num_classes - 1));
        Vec3f half = synth::class_base_half(class_id);
        for (int k = 0; k < 3; ++k) half[k] *= static_cast<float>(rng.uniform(0.85, 1.2));

        Primitive prim;
        prim.shape = synth::class_shape(class_id);
        prim.dims = half;
        if (prim.shape == PrimShape::kSphere) prim.dims = Vec3f::Constant(half.x());
        if (prim.shape == PrimShape::kCapsule) prim.dims = Vec3f(half.x(), half.y(), half.y());
        prim.round = 0.15f;
        Vec3f color = synth::class_palette(class_id);
        for (int k = 0; k < 3; ++k)
          color[k] = std::clamp(color[k] + static_cast<float>(rng.uniform(-0.08, 0.08)), 0.05f,
                                0.95f);
        prim.albedo = color;
        prim.albedo_top = color * 0.65f;

        const Vec3f prim_bounds = prim.bounds();
        const Vec3f box_half = prim_bounds * 1.15f;

        const float rr = std::sqrt(static_cast<float>(rng.uniform(0.05, 1.0))) *
                         synth::kPlacementRadius;
        const float pang = static_cast<float>(rng.uniform(0.0, 2.0 * kPi));
        const Vec3f pos(rr * std::cos(pang), rr * std::sin(pang), box_half.z());

        Vec3f drift = Vec3f::Zero();
        if (spec.actor_drift && rng.uniform() < 0.5) {
          const float dang = static_cast<float>(rng.uniform(0.0, 2.0 * kPi));
          const float dlen = static_cast<float>(rng.uniform(0.1, 0.4));
          drift = Vec3f(dlen * std::cos(dang), dlen * std::sin(dang), 0.f);
        }

        float yaw;
        if (!constrained) {
          yaw = static_cast<float>(rng.uniform(0.0, 2.0 * kPi));
        } else {
          // Face the arc centre so every train view lands in the front
          // hemisphere window.
          const Vec3f arc_mean(synth::kOrbitRadius, 0.f, 0.f);
          yaw = std::atan2(arc_mean.y() - pos.y(), arc_mean.x() - pos.x());
        }

        const float circum = std::hypot(box_half.x(), box_half.y());
        bool collides = false;
        for (const auto& other : placed) {
          const float min_sep = circum + other.circum + 0.25f;
          if ((pos - other.pos).head<2>().norm() < min_sep ||
              ((pos + drift) - (other.pos + other.drift)).head<2>().norm() < min_sep) {
            collides = true;
            break;
          }
        }
        if (collides) continue;

        ActorInstance<float> actor;
        actor.id = next_global_id;
        actor.class_id = class_id;
        actor.box.half = box_half;
        actor.trajectory.keys.push_back({0.f, SE3Posef::from_yaw(yaw, pos)});
        if (drift.norm() > 0.f && total_frames > 1)
          actor.trajectory.keys.push_back({t_end, SE3Posef::from_yaw(yaw, pos + drift)});

        if (constrained) {
          bool violated = false;
          for (int f = 0; f < spec.train_frames && !violated; ++f) {
            const float az = synth::view_azimuth(
                actor.trajectory.at(rig.frame_times[static_cast<std::size_t>(f)]),
                rig.camera_poses[static_cast<std::size_t>(f)].t);
            if (std::abs(az) > az_limit) violated = true;
          }
          if (violated) continue;
        }

        rec.desc.actors.push_back(actor);
        rec.gt.actor_prims.push_back(prim);
        rec.actor_global_ids.push_back(next_global_id);
        ds.registry.push_back({next_global_id, si, ai, class_id, box_half});
        placed.push_back({pos, circum, drift});
        ++next_global_id;
        ok = true;
      }
      GA_CHECK(ok, ValueError, "infeasible actor placement after bounded retries");
    }

    rec.desc.validate();
    ds.scenes.push_back(std::move(rec));
  }
  return ds;
}

void render_ground_truth(SyntheticDataset& dataset) {
  for (auto& rec : dataset.scenes) {
    const int frames = rec.desc.rig.frame_count();
    rec.images.clear();
    rec.depths.clear();
    rec.masks.clear();
    rec.sweeps.clear();
    for (int f = 0; f < frames; ++f) {
      OracleImage img = oracle_render_image(rec.desc, rec.gt, f);
      std::vector<float> rgb(static_cast<std::size_t>(img.width) * img.height * 3);
      std::vector<float> depth(static_cast<std::size_t>(img.width) * img.height);
      for (std::size_t i = 0; i < img.rgb.size(); ++i) {
        rgb[i * 3 + 0] = img.rgb[i].x();
        rgb[i * 3 + 1] = img.rgb[i].y();
        rgb[i * 3 + 2] = img.rgb[i].z();
        depth[i] = img.depth[i];
      }
      rec.images.push_back(Tensorf::from({img.height, img.width, 3}, std::move(rgb)));
      rec.depths.push_back(Tensorf::from({img.height, img.width}, std::move(depth)));
      rec.masks.push_back(img.mask);

      OracleSweep sweep = oracle_render_lidar(rec.desc, rec.gt, f);
      std::vector<LidarReturn> returns(sweep.hit.size());
      for (std::size_t i = 0; i < sweep.hit.size(); ++i) {
        returns[i].hit = sweep.hit[i];
        returns[i].depth = sweep.depth[i];
        returns[i].point = sweep.points[i];
        returns[i].actor = sweep.actor[i];
      }
      rec.sweeps.push_back(std::move(returns));
    }
  }
}

namespace {

json rig_to_json(const SensorRigf& rig) {
  json poses_cam = json::array(), poses_lid = json::array();
  for (const auto& p : rig.camera_poses) poses_cam.push_back(pose_to_json(p));
  for (const auto& p : rig.lidar_poses) poses_lid.push_back(pose_to_json(p));
  return json{{"camera",
               {{"focal_px", rig.camera.focal_px},
                {"cx", rig.camera.cx},
                {"cy", rig.camera.cy},
                {"width", rig.camera.width},
                {"height", rig.camera.height}}},
              {"lidar",
               {{"n_azimuth", rig.lidar.n_azimuth},
                {"n_elevation", rig.lidar.n_elevation},
                {"azimuth_start", rig.lidar.azimuth_start},
                {"elevation_min", rig.lidar.elevation_min},
                {"elevation_max", rig.lidar.elevation_max}}},
              {"camera_poses", poses_cam},
              {"lidar_poses", poses_lid},
              {"frame_times", rig.frame_times},
              {"ray_near", rig.ray_near},
              {"ray_far", rig.ray_far}};
}

SensorRigf rig_from_json(const json& j) {
  SensorRigf rig;
  const auto& cam = j.at("camera");
  rig.camera.focal_px = cam.at("focal_px").get<float>();
  rig.camera.cx = cam.at("cx").get<float>();
  rig.camera.cy = cam.at("cy").get<float>();
  rig.camera.width = cam.at("width").get<int>();
  rig.camera.height = cam.at("height").get<int>();
  const auto& lid = j.at("lidar");
  rig.lidar.n_azimuth = lid.at("n_azimuth").get<int>();
  rig.lidar.n_elevation = lid.at("n_elevation").get<int>();
  rig.lidar.azimuth_start = lid.at("azimuth_start").get<float>();
  rig.lidar.elevation_min = lid.at("elevation_min").get<float>();
  rig.lidar.elevation_max = lid.at("elevation_max").get<float>();
  for (const auto& p : j.at("camera_poses")) rig.camera_poses.push_back(pose_from_json(p));
  for (const auto& p : j.at("lidar_poses")) rig.lidar_poses.push_back(pose_from_json(p));
  rig.frame_times = j.at("frame_times").get<std::vector<float>>();
  rig.ray_near = j.at("ray_near").get<float>();
  rig.ray_far = j.at("ray_far").get<float>();
  return rig;
}

json scene_to_json(const SceneRecord& rec) {
  json actors = json::array();
  for (std::size_t i = 0; i < rec.desc.actors.size(); ++i) {
    const auto& a = rec.desc.actors[i];
    json keys = json::array();
    for (const auto& [time, pose] : a.trajectory.keys)
      keys.push_back(json{{"time", time}, {"pose", pose_to_json(pose)}});
    actors.push_back(json{{"id", a.id},
                          {"class_id", a.class_id},
                          {"box_half", vec3_to_json(a.box.half)},
                          {"trajectory", keys},
                          {"prim", primitive_to_json(rec.gt.actor_prims[i])}});
  }
  json background = json::array();
  for (const auto& prim : rec.gt.background) background.push_back(primitive_to_json(prim));
  json splits = json::array();
  for (const auto& s : rec.splits) splits.push_back(s.heldout ? "heldout" : "train");
  return json{{"name", rec.desc.name},
              {"bounds_center", vec3_to_json(rec.desc.bounds_center)},
              {"bounds_half", vec3_to_json(rec.desc.bounds.half)},
              {"condition_tod", rec.desc.condition_tod},
              {"illum", rec.gt.illum},
              {"actors", actors},
              {"background", background},
              {"rig", rig_to_json(rec.desc.rig)},
              {"splits", splits}};
}

SceneRecord scene_from_json(const json& j) {
  SceneRecord rec;
  rec.desc.name = j.at("name").get<std::string>();
  rec.desc.bounds_center = vec3_from_json(j.at("bounds_center"));
  rec.desc.bounds.half = vec3_from_json(j.at("bounds_half"));
  rec.desc.condition_tod = j.at("condition_tod").get<int>();
  rec.gt.illum = j.at("illum").get<float>();
  for (const auto& aj : j.at("actors")) {
    ActorInstance<float> a;
    a.id = aj.at("id").get<int>();
    a.class_id = aj.at("class_id").get<int>();
    a.box.half = vec3_from_json(aj.at("box_half"));
    for (const auto& kj : aj.at("trajectory"))
      a.trajectory.keys.push_back({kj.at("time").get<float>(), pose_from_json(kj.at("pose"))});
    rec.desc.actors.push_back(a);
    rec.gt.actor_prims.push_back(primitive_from_json(aj.at("prim")));
    rec.actor_global_ids.push_back(a.id);
  }
  for (const auto& pj : j.at("background")) rec.gt.background.push_back(primitive_from_json(pj));
  rec.desc.rig = rig_from_json(j.at("rig"));
  for (const auto& sj : j.at("splits")) rec.splits.push_back({sj.get<std::string>() == "heldout"});
  rec.desc.validate();
  return rec;
}

}  // namespace

void write_dataset(const SyntheticDataset& dataset, const std::string& root) {
  fs::create_directories(root);
  json manifest;
  manifest["format"] = "genassets-dataset";
  manifest["version"] = 1;
  manifest["spec"] = json{{"scenes", dataset.spec.scenes},
                          {"actors_per_scene", dataset.spec.actors_per_scene},
                          {"train_frames", dataset.spec.train_frames},
                          {"heldout_frames", dataset.spec.heldout_frames},
                          {"image_size", dataset.spec.image_size},
                          {"lidar_azimuth", dataset.spec.lidar_azimuth},
                          {"lidar_elevation", dataset.spec.lidar_elevation},
                          {"num_classes", dataset.spec.num_classes},
                          {"azimuth_range_deg", dataset.spec.azimuth_range_deg},
                          {"night_fraction", dataset.spec.night_fraction},
                          {"actor_drift", dataset.spec.actor_drift},
                          {"seed", dataset.spec.seed}};
  json registry = json::array();
  for (const auto& e : dataset.registry)
    registry.push_back(json{{"global_id", e.global_id},
                            {"scene_index", e.scene_index},
                            {"local_index", e.local_index},
                            {"class_id", e.class_id},
                            {"box_half", vec3_to_json(e.box_half)}});
  manifest["registry"] = registry;
  json classes = json::array();
  for (const auto& h : dataset.class_canonical_half) classes.push_back(vec3_to_json(h));
  manifest["class_canonical_half"] = classes;
  json scene_names = json::array();
  for (const auto& rec : dataset.scenes) scene_names.push_back(rec.desc.name);
  manifest["scenes"] = scene_names;
  {
    std::ofstream os(fs::path(root) / "manifest.json");
    GA_CHECK(os.good(), IoError, "cannot write dataset manifest");
    os << manifest.dump(2) << "\n";
  }

  for (const auto& rec : dataset.scenes) {
    const fs::path sdir = fs::path(root) / rec.desc.name;
    fs::create_directories(sdir / "images");
    fs::create_directories(sdir / "masks");
    fs::create_directories(sdir / "sweeps");
    {
      std::ofstream os(sdir / "scene.json");
      GA_CHECK(os.good(), IoError, "cannot write scene manifest");
      os << scene_to_json(rec).dump(2) << "\n";
    }
    GA_CHECK(rec.images.size() == static_cast<std::size_t>(rec.desc.rig.frame_count()), ValueError,
             "write_dataset: ground truth not rendered");
    std::map<std::string, Tensorf> depth_entries;
    for (int f = 0; f < rec.desc.rig.frame_count(); ++f) {
      const auto name = frame_name(f);
      write_png((sdir / "images" / (name + ".png")).string(),
                tensor_to_rgb8(rec.images[static_cast<std::size_t>(f)]));
      write_png((sdir / "masks" / (name + ".png")).string(),
                gray8(rec.desc.rig.camera.width, rec.desc.rig.camera.height,
                      rec.masks[static_cast<std::size_t>(f)]));
      depth_entries["depth/" + name] = rec.depths[static_cast<std::size_t>(f)];

      PlyCloud cloud;
      const auto& sweep = rec.sweeps[static_cast<std::size_t>(f)];
      for (std::size_t i = 0; i < sweep.size(); ++i) {
        if (!sweep[i].hit) continue;
        cloud.xyz.push_back(sweep[i].point);
        cloud.scan_index.push_back(static_cast<std::uint32_t>(i));
        cloud.actor.push_back(sweep[i].actor);
      }
      write_ply((sdir / "sweeps" / (name + ".ply")).string(), cloud);
    }
    write_container((sdir / "depth.gaft").string(), depth_entries);
  }
}

SyntheticDataset read_dataset(const std::string& root) {
  const fs::path manifest_path = fs::path(root) / "manifest.json";
  std::ifstream is(manifest_path);
  GA_CHECK(is.good(), MissingPrerequisite, "dataset manifest not found: " + manifest_path.string());
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw IoError("dataset manifest parse error: " + std::string(e.what()));
  }
  GA_CHECK(manifest.value("format", "") == "genassets-dataset", IoError,
           "not a dataset directory: " + root);
  GA_CHECK(manifest.value("version", 0) == 1, IoError, "unsupported dataset version");

  SyntheticDataset ds;
  const auto& sj = manifest.at("spec");
  ds.spec.scenes = sj.at("scenes").get<int>();
  ds.spec.actors_per_scene = sj.at("actors_per_scene").get<int>();
  ds.spec.train_frames = sj.at("train_frames").get<int>();
  ds.spec.heldout_frames = sj.at("heldout_frames").get<int>();
  ds.spec.image_size = sj.at("image_size").get<int>();
  ds.spec.lidar_azimuth = sj.at("lidar_azimuth").get<int>();
  ds.spec.lidar_elevation = sj.at("lidar_elevation").get<int>();
  ds.spec.num_classes = sj.at("num_classes").get<int>();
  ds.spec.azimuth_range_deg = sj.at("azimuth_range_deg").get<float>();
  ds.spec.night_fraction = sj.at("night_fraction").get<float>();
  ds.spec.actor_drift = sj.at("actor_drift").get<bool>();
  ds.spec.seed = sj.at("seed").get<std::uint64_t>();
  for (const auto& e : manifest.at("registry"))
    ds.registry.push_back({e.at("global_id").get<int>(), e.at("scene_index").get<int>(),
                           e.at("local_index").get<int>(), e.at("class_id").get<int>(),
                           vec3_from_json(e.at("box_half"))});
  for (const auto& cj : manifest.at("class_canonical_half"))
    ds.class_canonical_half.push_back(vec3_from_json(cj));

  for (const auto& name_j : manifest.at("scenes")) {
    const std::string name = name_j.get<std::string>();
    const fs::path sdir = fs::path(root) / name;
    std::ifstream ss(sdir / "scene.json");
    GA_CHECK(ss.good(), IoError, "scene manifest not found: " + (sdir / "scene.json").string());
    json sjson;
    try {
      ss >> sjson;
    } catch (const json::exception& e) {
      throw IoError("scene manifest parse error: " + std::string(e.what()));
    }
    SceneRecord rec = scene_from_json(sjson);

    auto depth_entries = read_container((sdir / "depth.gaft").string());
    const int frames = rec.desc.rig.frame_count();
    for (int f = 0; f < frames; ++f) {
      const auto fname = frame_name(f);
      rec.images.push_back(
          rgb8_to_tensor(read_png((sdir / "images" / (fname + ".png")).string())));
      const ImageU8 mask = read_png((sdir / "masks" / (fname + ".png")).string());
      GA_CHECK(mask.channels == 1, IoError, "mask must be grayscale");
      rec.masks.push_back(mask.pixels);
      auto it = depth_entries.find("depth/" + fname);
      GA_CHECK(it != depth_entries.end(), IoError, "missing depth map for frame " + fname);
      rec.depths.push_back(it->second);

      const PlyCloud cloud = read_ply((sdir / "sweeps" / (fname + ".ply")).string());
      std::vector<LidarReturn> returns(
          static_cast<std::size_t>(rec.desc.rig.lidar.count()));
      const Vec3f origin = rec.desc.rig.lidar_poses[static_cast<std::size_t>(f)].t;
      GA_CHECK(cloud.scan_index.size() == cloud.xyz.size() &&
                   cloud.actor.size() == cloud.xyz.size(),
               IoError, "dataset sweep missing scan_index/actor columns");
      for (std::size_t i = 0; i < cloud.xyz.size(); ++i) {
        const std::uint32_t idx = cloud.scan_index[i];
        GA_CHECK(idx < returns.size(), IoError, "sweep scan index out of range");
        returns[idx].hit = true;
        returns[idx].point = cloud.xyz[i];
        returns[idx].depth = (cloud.xyz[i] - origin).norm();
        returns[idx].actor = cloud.actor[i];
      }
      rec.sweeps.push_back(std::move(returns));
    }
    ds.scenes.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace ga
