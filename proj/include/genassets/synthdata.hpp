// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
//
// Procedural ground-truth scenes: analytic SDF primitives with parametric
// albedo standing in for real actors, a moving sensor rig, and an exact
// sphere-traced reference renderer that supplies GT images, depth maps,
// instance masks and LiDAR sweeps.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "genassets/fields.hpp"
#include "genassets/render.hpp"

namespace ga {

enum class PrimShape { kBox = 0, kSphere = 1, kCapsule = 2, kRoundedBox = 3 };

struct Primitive {
  PrimShape shape = PrimShape::kBox;
  Vec3f dims = Vec3f::Ones();  // box/rounded: half extents; sphere: radius in x;
                               // capsule: half-length in x, radius in y
  float round = 0.1f;          // rounded-box corner radius
  Vec3f albedo = Vec3f::Constant(0.5f);
  Vec3f albedo_top = Vec3f::Constant(0.3f);  // band above z = +30% of height
  SE3Posef pose;  // world_from_prim; identity for actor prims (actor frame)

  // Bounding half-extents in the primitive frame.
  Vec3f bounds() const {
    switch (shape) {
      case PrimShape::kBox:
      case PrimShape::kRoundedBox:
        return dims;
      case PrimShape::kSphere:
        return Vec3f::Constant(dims.x());
      case PrimShape::kCapsule:
        return {dims.x() + dims.y(), dims.y(), dims.y()};
    }
    return dims;
  }
};

inline float sdf_primitive(const Primitive& prim, const Vec3f& p_local) {
  switch (prim.shape) {
    case PrimShape::kBox: {
      const Vec3f q = p_local.cwiseAbs() - prim.dims;
      const float outside = q.cwiseMax(0.f).norm();
      const float inside = std::min(q.maxCoeff(), 0.f);
      return outside + inside;
    }
    case PrimShape::kSphere:
      return p_local.norm() - prim.dims.x();
    case PrimShape::kCapsule: {
      const float x = std::clamp(p_local.x(), -prim.dims.x(), prim.dims.x());
      return (p_local - Vec3f(x, 0.f, 0.f)).norm() - prim.dims.y();
    }
    case PrimShape::kRoundedBox: {
      const float r = std::min(prim.round, prim.dims.minCoeff() * 0.9f);
      const Vec3f q = p_local.cwiseAbs() - (prim.dims - Vec3f::Constant(r));
      return q.cwiseMax(0.f).norm() + std::min(q.maxCoeff(), 0.f) - r;
    }
  }
  return 1e9f;
}

inline Vec3f albedo_at(const Primitive& prim, const Vec3f& p_local) {
  const float band_z = prim.bounds().z() * 0.3f;
  return p_local.z() > band_z ? prim.albedo_top : prim.albedo;
}

// Lambertian shading with a fixed directional light plus ambient.
inline Vec3f shade(const Vec3f& albedo, const Vec3f& normal_world, float illum) {
  static const Vec3f kLightDir = Vec3f(0.35f, 0.25f, -0.9f).normalized();
  const float diffuse = std::max(0.f, normal_world.dot(-kLightDir));
  Vec3f c = albedo * (0.35f + 0.65f * diffuse) * illum;
  return c.cwiseMin(1.f).cwiseMax(0.f);
}

inline Vec3f sky_color(float illum) { return Vec3f(0.55f, 0.70f, 0.90f) * illum; }

// Analytic counterpart of a composed scene: static background primitives in
// world frame, one primitive per actor in the actor frame.
struct GtScene {
  std::vector<Primitive> background;
  std::vector<Primitive> actor_prims;  // index-aligned with SceneDesc::actors
  float illum = 1.f;
};

struct GtHit {
  bool hit = false;
  float depth = 0.f;
  Vec3f point = Vec3f::Zero();
  Vec3f normal = Vec3f::Zero();
  Vec3f color = Vec3f::Zero();
  int actor = kBackgroundField - 1;  // -2 = none, -1 = background, >=0 actor index
};

class GtField {
 public:
  GtField(const SceneDesc<float>& scene, const GtScene& gt, float time)
      : scene_(scene), gt_(gt) {
    actor_poses_.reserve(scene.actors.size());
    for (const auto& a : scene.actors) actor_poses_.push_back(a.pose_at(time));
  }

  // Scene SDF: min over all primitives. `owner` reports which primitive wins
  // (-1 background, >=0 actor index).
  float sdf(const Vec3f& p_world, int* owner = nullptr) const {
    float best = 1e9f;
    int who = kBackgroundField;
    for (const auto& prim : gt_.background) {
      const float d = sdf_primitive(prim, prim.pose.inverse_apply(p_world));
      if (d < best) {
        best = d;
        who = kBackgroundField;
      }
    }
    for (std::size_t i = 0; i < gt_.actor_prims.size(); ++i) {
      const float d =
          sdf_primitive(gt_.actor_prims[i], actor_poses_[i].inverse_apply(p_world));
      if (d < best) {
        best = d;
        who = static_cast<int>(i);
      }
    }
    if (owner) *owner = who;
    return best;
  }

  Vec3f normal(const Vec3f& p) const {
    const float h = 1e-3f;
    Vec3f n;
    for (int i = 0; i < 3; ++i) {
      Vec3f dp = Vec3f::Zero();
      dp[i] = h;
      n[i] = sdf(p + dp) - sdf(p - dp);
    }
    const float len = n.norm();
    return len > 0.f ? Vec3f(n / len) : Vec3f::UnitZ();
  }

  Vec3f albedo(const Vec3f& p_world, int owner) const {
    if (owner >= 0)
      return albedo_at(gt_.actor_prims[static_cast<std::size_t>(owner)],
                       actor_poses_[static_cast<std::size_t>(owner)].inverse_apply(p_world));
    // Nearest background primitive colours the point.
    float best = 1e9f;
    Vec3f c = Vec3f::Constant(0.5f);
    for (const auto& prim : gt_.background) {
      const Vec3f local = prim.pose.inverse_apply(p_world);
      const float d = sdf_primitive(prim, local);
      if (d < best) {
        best = d;
        c = albedo_at(prim, local);
      }
    }
    return c;
  }

  // Sphere tracing to |sdf| <= tol; misses past ray.tfar.
  GtHit trace(const Rayf& ray, float tol = 1e-4f, int max_steps = 256) const {
    GtHit out;
    float t = ray.tnear;
    for (int step = 0; step < max_steps && t <= ray.tfar; ++step) {
      const Vec3f p = ray.at(t);
      int owner = kBackgroundField;
      const float d = sdf(p, &owner);
      if (d <= tol) {
        out.hit = true;
        out.depth = t;
        out.point = p;
        out.normal = normal(p);
        out.actor = owner;
        out.color = shade(albedo(p, owner), out.normal, gt_.illum);
        return out;
      }
      t += std::max(d, tol);
    }
    return out;
  }

  const GtScene& gt() const { return gt_; }
  const SE3Posef& actor_pose(int i) const { return actor_poses_[static_cast<std::size_t>(i)]; }

 private:
  const SceneDesc<float>& scene_;
  const GtScene& gt_;
  std::vector<SE3Posef> actor_poses_;
};

// Injects the analytic SDF and shaded albedo into the neural-field query
// slot: SDF per sample and RGB as a 3-channel feature. Lets the volume
// renderer be validated against the sphere-traced reference.
template <class T>
struct AnalyticFieldProvider {
  const GtField* field = nullptr;
  const SceneDesc<float>* scene = nullptr;
  float time = 0.f;

  FieldHead<T>::Output operator()(int field_id, const Tensor<T>& pts,
                                  const std::vector<Vec3<T>>& dirs) const {
    (void)dirs;
    const std::int64_t n = pts.dim(0);
    std::vector<T> sdf_vals(static_cast<std::size_t>(n));
    std::vector<T> rgb(static_cast<std::size_t>(n) * 3);
    for (std::int64_t i = 0; i < n; ++i) {
      Vec3f local(static_cast<float>(pts.data()[i * 3 + 0]),
                  static_cast<float>(pts.data()[i * 3 + 1]),
                  static_cast<float>(pts.data()[i * 3 + 2]));
      Vec3f world;
      float d;
      Vec3f alb;
      if (field_id >= 0) {
        const auto& prim = field->gt().actor_prims[static_cast<std::size_t>(field_id)];
        d = sdf_primitive(prim, local);
        alb = albedo_at(prim, local);
        world = field->actor_pose(field_id).apply(local);
      } else {
        world = local + scene->bounds_center;
        float best = 1e9f;
        alb = Vec3f::Constant(0.5f);
        for (const auto& prim : field->gt().background) {
          const Vec3f pl = prim.pose.inverse_apply(world);
          const float pd = sdf_primitive(prim, pl);
          if (pd < best) {
            best = pd;
            alb = albedo_at(prim, pl);
          }
        }
        d = best;
      }
      const Vec3f col = shade(alb, field->normal(world), field->gt().illum);
      sdf_vals[static_cast<std::size_t>(i)] = static_cast<T>(d);
      rgb[static_cast<std::size_t>(i * 3 + 0)] = static_cast<T>(col.x());
      rgb[static_cast<std::size_t>(i * 3 + 1)] = static_cast<T>(col.y());
      rgb[static_cast<std::size_t>(i * 3 + 2)] = static_cast<T>(col.z());
    }
    typename FieldHead<T>::Output out;
    out.sdf = Tensor<T>::from({n, 1}, std::move(sdf_vals));
    out.feature = Tensor<T>::from({n, 3}, std::move(rgb));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Oracle rendering.

struct OracleImage {
  int width = 0, height = 0;
  std::vector<Vec3f> rgb;          // row-major
  std::vector<float> depth;        // 0 where no hit
  std::vector<std::uint8_t> mask;  // 0 = sky/ground-free, 1 = background prim, 2+i = actor i
};

struct OracleSweep {
  std::vector<bool> hit;
  std::vector<float> depth;
  std::vector<Vec3f> points;
  std::vector<int> actor;  // -1 background, >=0 actor index; only meaningful where hit
};

inline OracleImage oracle_render_image(const SceneDesc<float>& scene, const GtScene& gt, int frame,
                                       int downsample = 1) {
  const GtField field(scene, gt, scene.rig.time_of(frame));
  const auto rays = camera_rays(scene.rig, frame, downsample);
  OracleImage img;
  img.width = scene.rig.camera.width / downsample;
  img.height = scene.rig.camera.height / downsample;
  img.rgb.resize(rays.size());
  img.depth.assign(rays.size(), 0.f);
  img.mask.assign(rays.size(), 0);
  const Vec3f sky = sky_color(gt.illum);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const GtHit hit = field.trace(rays[i]);
    if (hit.hit) {
      img.rgb[i] = hit.color;
      img.depth[i] = hit.depth;
      img.mask[i] = hit.actor >= 0 ? static_cast<std::uint8_t>(2 + hit.actor) : 1;
    } else {
      img.rgb[i] = sky;
    }
  }
  return img;
}

inline OracleSweep oracle_render_lidar(const SceneDesc<float>& scene, const GtScene& gt,
                                       int frame) {
  const GtField field(scene, gt, scene.rig.time_of(frame));
  const auto rays = lidar_rays(scene.rig, frame);
  OracleSweep sweep;
  sweep.hit.assign(rays.size(), false);
  sweep.depth.assign(rays.size(), 0.f);
  sweep.points.assign(rays.size(), Vec3f::Zero());
  sweep.actor.assign(rays.size(), kBackgroundField);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const GtHit hit = field.trace(rays[i]);
    if (hit.hit) {
      sweep.hit[i] = true;
      sweep.depth[i] = hit.depth;
      sweep.points[i] = hit.point;
      sweep.actor[i] = hit.actor;
    }
  }
  return sweep;
}

// ---------------------------------------------------------------------------
// Dataset generation.

struct DatasetSpec {
  int scenes = 16;
  int actors_per_scene = 4;
  int train_frames = 16;
  int heldout_frames = 4;
  int image_size = 128;
  int lidar_azimuth = 64;
  int lidar_elevation = 16;
  int num_classes = 4;
  float azimuth_range_deg = 180.f;  // observed |azimuth| limit in each actor's frame
  float night_fraction = 0.25f;
  bool actor_drift = true;  // small linear motion on some actors
  std::uint64_t seed = 1;
};

struct ActorRegistryEntry {
  int global_id = 0;
  int scene_index = 0;
  int local_index = 0;
  int class_id = 0;
  Vec3f box_half = Vec3f::Ones();
};

struct FrameSplit {
  bool heldout = false;
};

struct LidarReturn {
  bool hit = false;
  float depth = 0.f;
  Vec3f point = Vec3f::Zero();
  int actor = kBackgroundField;
};

struct SceneRecord {
  SceneDesc<float> desc;
  GtScene gt;
  std::vector<FrameSplit> splits;       // per frame
  std::vector<int> actor_global_ids;    // per local actor
  // Ground truth per frame (populated by render_ground_truth / read_dataset):
  std::vector<Tensorf> images;               // [H,W,3]
  std::vector<Tensorf> depths;               // [H,W]
  std::vector<std::vector<std::uint8_t>> masks;  // [H*W]
  std::vector<std::vector<LidarReturn>> sweeps;  // per frame, per scan index
};

struct SyntheticDataset {
  DatasetSpec spec;
  std::vector<SceneRecord> scenes;
  std::vector<ActorRegistryEntry> registry;
  std::vector<Vec3f> class_canonical_half;  // per class, canonical box half extents

  int actor_count() const { return static_cast<int>(registry.size()); }
};

namespace synth {

inline constexpr float kOrbitRadius = 8.f;
inline constexpr float kSensorHeight = 1.6f;
inline constexpr float kPlacementRadius = 3.2f;

inline PrimShape class_shape(int class_id) {
  return static_cast<PrimShape>(class_id % 4);
}

inline Vec3f class_base_half(int class_id) {
  switch (class_id % 4) {
    case 0: return {1.1f, 0.55f, 0.45f};   // box
    case 1: return {0.55f, 0.55f, 0.55f};  // sphere
    case 2: return {0.9f, 0.35f, 0.35f};   // capsule
    default: return {0.7f, 0.5f, 0.5f};    // rounded box
  }
}

inline Vec3f class_palette(int class_id) {
  static const std::array<Vec3f, 8> palette = {
      Vec3f(0.75f, 0.20f, 0.15f), Vec3f(0.15f, 0.45f, 0.75f), Vec3f(0.20f, 0.65f, 0.30f),
      Vec3f(0.80f, 0.65f, 0.15f), Vec3f(0.55f, 0.25f, 0.65f), Vec3f(0.85f, 0.45f, 0.10f),
      Vec3f(0.25f, 0.60f, 0.60f), Vec3f(0.60f, 0.60f, 0.60f)};
  return palette[static_cast<std::size_t>(class_id) % palette.size()];
}

// world_from_camera looking at `target` with +z forward, +y pointing.
// roughly down (CV convention).
inline SE3Posef look_at(const Vec3f& eye, const Vec3f& target) {
  const Vec3f fwd = (target - eye).normalized();
  Vec3f right = fwd.cross(Vec3f::UnitZ());
  if (right.norm() < 1e-5f) right = Vec3f::UnitX();
  right.normalize();
  const Vec3f down = fwd.cross(right).normalized();
  SE3Posef p;
  p.R.col(0) = right;
  p.R.col(1) = down;
  p.R.col(2) = fwd;
  p.t = eye;
  return p;
}

// cam_from_lidar: lidar (+x fwd, +y left, +z up) in camera axes.
inline Eigen::Matrix3f cam_from_lidar() {
  Eigen::Matrix3f m;
  m.col(0) = Eigen::Vector3f(0, 0, 1);
  m.col(1) = Eigen::Vector3f(-1, 0, 0);
  m.col(2) = Eigen::Vector3f(0, -1, 0);
  return m;
}

// Viewing azimuth of `sensor_pos` in the actor's frame, radians in (-pi, pi].
inline float view_azimuth(const SE3Posef& actor_pose, const Vec3f& sensor_pos) {
  const Vec3f v = actor_pose.R.transpose() * (sensor_pos - actor_pose.t);
  return std::atan2(v.y(), v.x());
}

}  // namespace synth

SyntheticDataset make_dataset(const DatasetSpec& spec);

// Fills images/depths/masks/sweeps on every scene by oracle rendering.
void render_ground_truth(SyntheticDataset& dataset);

// Directory layout: manifest.json + per-scene scene.json, PNG images/masks,
// depth tensor container and binary PLY sweeps.
void write_dataset(const SyntheticDataset& dataset, const std::string& root);
SyntheticDataset read_dataset(const std::string& root);

}  // namespace ga
