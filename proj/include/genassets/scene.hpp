// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "genassets/ops.hpp"
#include "genassets/sensors.hpp"

namespace ga {

// Explicit field features on three orthogonal planes. Each grid is [N, N, C]
// with rows indexed by the second projected coordinate. The extent maps the
// field volume to [-1,1]^2 per plane; queries outside clamp to the boundary.
template <class T>
struct TriPlane {
  Tensor<T> xy, xz, yz;  // [N, N, C] each
  Vec3<T> extent = Vec3<T>::Ones();  // half-size of the field volume, metres

  std::int64_t resolution() const { return xy.dim(0); }
  std::int64_t channels() const { return xy.dim(2); }

  void validate() const {
    GA_CHECK(xy.rank() == 3 && xz.rank() == 3 && yz.rank() == 3, ShapeError,
             "triplane grids must be [N,N,C]");
    GA_CHECK(xy.shape() == xz.shape() && xy.shape() == yz.shape(), ShapeError,
             "triplane grids must share resolution and channels");
    GA_CHECK(xy.dim(0) == xy.dim(1), ShapeError, "triplane grids must be square");
    GA_CHECK((extent.array() > T(0)).all(), ValueError, "triplane extent must be positive");
  }

  static TriPlane zeros(std::int64_t n, std::int64_t c, Vec3<T> extent) {
    TriPlane tp;
    tp.xy = Tensor<T>::zeros({n, n, c});
    tp.xz = Tensor<T>::zeros({n, n, c});
    tp.yz = Tensor<T>::zeros({n, n, c});
    tp.extent = extent;
    return tp;
  }

  static TriPlane randn(std::int64_t n, std::int64_t c, Vec3<T> extent, Rng& rng, T stddev) {
    TriPlane tp;
    tp.xy = Tensor<T>::randn({n, n, c}, rng, stddev);
    tp.xz = Tensor<T>::randn({n, n, c}, rng, stddev);
    tp.yz = Tensor<T>::randn({n, n, c}, rng, stddev);
    tp.extent = extent;
    return tp;
  }
};

// Per-plane projection of [n,3] field-frame points to [n,2] normalized plane
// coordinates, as a matmul against a constant selector so position gradients
// flow when positions are attached.
template <class T>
Tensor<T> project_plane(const Tensor<T>& points, int axis_u, int axis_v, const Vec3<T>& extent) {
  std::vector<T> sel(6, T(0));
  sel[static_cast<std::size_t>(axis_u) * 2 + 0] = T(1) / extent[axis_u];
  sel[static_cast<std::size_t>(axis_v) * 2 + 1] = T(1) / extent[axis_v];
  return matmul(points, Tensor<T>::from({3, 2}, std::move(sel)));
}

// Concatenated per-plane bilinear interpolations, [n, 3C].
template <class T>
Tensor<T> triplane_query(const TriPlane<T>& tp, const Tensor<T>& points) {
  GA_CHECK(points.rank() == 2 && points.dim(1) == 3, ShapeError,
           "triplane_query() points must be [n,3]");
  Tensor<T> f_xy = bilinear_sample(tp.xy, project_plane(points, 0, 1, tp.extent));
  Tensor<T> f_xz = bilinear_sample(tp.xz, project_plane(points, 0, 2, tp.extent));
  Tensor<T> f_yz = bilinear_sample(tp.yz, project_plane(points, 1, 2, tp.extent));
  return concat<T>({f_xy, f_xz, f_yz}, 1);
}

// Dynamic actor: a box-bounded field posed by a keyframed trajectory. The
// field parameters live elsewhere (latent library or an explicit triplane
// bank); latent_ref indexes into whichever bank the pipeline uses.
template <class T>
struct ActorInstance {
  int id = 0;
  int class_id = 0;
  Aabb<T> box;
  PoseTrack<T> trajectory;
  int latent_ref = -1;

  SE3Pose<T> pose_at(T time) const { return trajectory.at(time); }

  void validate() const {
    GA_CHECK(box.valid(), ValueError, "actor box must have positive half-extents");
    trajectory.validate();
  }
};

constexpr int kBackgroundField = -1;

template <class T>
struct SceneDesc {
  Vec3<T> bounds_center = Vec3<T>::Zero();
  Aabb<T> bounds;
  std::vector<ActorInstance<T>> actors;
  SensorRig<T> rig;
  std::string name;
  int condition_tod = 0;  // 0 = day, 1 = night

  void validate() const {
    GA_CHECK(bounds.valid(), ValueError, "scene bounds must be positive");
    for (const auto& a : actors) {
      a.validate();
      for (const auto& [time, pose] : a.trajectory.keys) {
        // Every box corner must stay inside the scene bounds at every key.
        for (int corner = 0; corner < 8; ++corner) {
          Vec3<T> c(a.box.half.x() * ((corner & 1) ? T(1) : T(-1)),
                    a.box.half.y() * ((corner & 2) ? T(1) : T(-1)),
                    a.box.half.z() * ((corner & 4) ? T(1) : T(-1)));
          const Vec3<T> w = pose.apply(c) - bounds_center;
          GA_CHECK((w.cwiseAbs().array() <= bounds.half.array() + T(1e-4)).all(), ValueError,
                   "actor box leaves scene bounds");
        }
      }
    }
  }
};

struct FieldPoint {
  int field_id = kBackgroundField;
  Vec3f local;  // coordinates in the owning field's frame
};

// Attributes a world point to the actor whose posed box contains it, else the
// background. Nested/overlapping boxes resolve to the smallest volume.
template <class T>
std::pair<int, Vec3<T>> classify_point(const SceneDesc<T>& scene, const Vec3<T>& x_world, T time) {
  const Vec3<T> rel = x_world - scene.bounds_center;
  GA_CHECK((rel.cwiseAbs().array() <= scene.bounds.half.array() + T(1e-5)).all(), ValueError,
           "classify_point: point outside scene bounds");
  int best = kBackgroundField;
  T best_volume = T(0);
  Vec3<T> best_local = rel;
  for (std::size_t i = 0; i < scene.actors.size(); ++i) {
    const auto& actor = scene.actors[i];
    const Vec3<T> local = actor.pose_at(time).inverse_apply(x_world);
    if (!actor.box.contains(local)) continue;
    const T vol = actor.box.volume();
    if (best == kBackgroundField || vol < best_volume) {
      best = static_cast<int>(i);
      best_volume = vol;
      best_local = local;
    }
  }
  return {best, best_local};
}

// ---------------------------------------------------------------------------
// Occupancy grid over the scene bounds. Voxel intervals are half-open with
// boundary points assigned to the lower-index voxel.

class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  OccupancyGrid(Vec3f min_corner, float voxel, Eigen::Vector3i dims)
      : min_(min_corner), voxel_(voxel), dims_(dims),
        bits_(static_cast<std::size_t>(dims.x()) * static_cast<std::size_t>(dims.y()) *
                  static_cast<std::size_t>(dims.z()),
              0) {
    GA_CHECK(voxel > 0.f, ValueError, "voxel size must be positive");
    GA_CHECK((dims.array() > 0).all(), ValueError, "occupancy grid dims must be positive");
  }

  float voxel() const { return voxel_; }
  const Eigen::Vector3i& dims() const { return dims_; }
  const Vec3f& min_corner() const { return min_; }

  std::optional<Eigen::Vector3i> voxel_of(const Vec3f& p) const {
    Eigen::Vector3i idx;
    for (int i = 0; i < 3; ++i) {
      const float rel = p[i] - min_[i];
      const long long k = static_cast<long long>(std::ceil(static_cast<double>(rel) /
                                                           static_cast<double>(voxel_))) -
                          1;
      const long long clamped = rel <= 0.f ? 0 : k;
      if (clamped < 0 || clamped >= dims_[i]) return std::nullopt;
      idx[i] = static_cast<int>(clamped);
    }
    return idx;
  }

  bool occupied(const Eigen::Vector3i& v) const { return bits_[flat(v)] != 0; }

  bool occupied_at(const Vec3f& p) const {
    const auto v = voxel_of(p);
    return v && occupied(*v);
  }

  void mark(const Eigen::Vector3i& v) { bits_[flat(v)] = 1; }

  void mark_point(const Vec3f& p) {
    if (auto v = voxel_of(p)) mark(*v);
  }

  void mark_all() { std::fill(bits_.begin(), bits_.end(), 1); }

  void dilate() {
    std::vector<std::uint8_t> out(bits_.size(), 0);
    for (int z = 0; z < dims_.z(); ++z)
      for (int y = 0; y < dims_.y(); ++y)
        for (int x = 0; x < dims_.x(); ++x) {
          if (!bits_[flat({x, y, z})]) continue;
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const Eigen::Vector3i n(x + dx, y + dy, z + dz);
                if ((n.array() >= 0).all() && (n.array() < dims_.array()).all())
                  out[flat(n)] = 1;
              }
        }
    bits_ = std::move(out);
  }

  std::size_t occupied_count() const {
    std::size_t c = 0;
    for (auto b : bits_) c += b;
    return c;
  }

 private:
  std::size_t flat(const Eigen::Vector3i& v) const {
    return (static_cast<std::size_t>(v.z()) * static_cast<std::size_t>(dims_.y()) +
            static_cast<std::size_t>(v.y())) *
               static_cast<std::size_t>(dims_.x()) +
           static_cast<std::size_t>(v.x());
  }

  Vec3f min_ = Vec3f::Zero();
  float voxel_ = 0.5f;
  Eigen::Vector3i dims_ = Eigen::Vector3i::Zero();
  std::vector<std::uint8_t> bits_;
};

namespace detail {

// OBB vs AABB separating-axis overlap, both given in world coordinates.
inline bool obb_aabb_overlap(const Aabbf& obb, const SE3Posef& obb_pose, const Vec3f& aabb_min,
                             const Vec3f& aabb_max) {
  const Vec3f ac = 0.5f * (aabb_min + aabb_max);
  const Vec3f ah = 0.5f * (aabb_max - aabb_min);
  const Eigen::Matrix3f R = obb_pose.R;
  const Vec3f d = obb_pose.t - ac;

  auto test_axis = [&](const Vec3f& axis) {
    const float len2 = axis.squaredNorm();
    if (len2 < 1e-12f) return true;  // degenerate axis, skip
    const float dist = std::abs(d.dot(axis));
    float ra = 0.f, rb = 0.f;
    for (int i = 0; i < 3; ++i) {
      ra += ah[i] * std::abs(axis[i]);
      rb += obb.half[i] * std::abs(axis.dot(R.col(i)));
    }
    return dist <= ra + rb + 1e-6f;
  };

  for (int i = 0; i < 3; ++i) {
    Vec3f e = Vec3f::Zero();
    e[i] = 1.f;
    if (!test_axis(e)) return false;
    if (!test_axis(R.col(i))) return false;
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Vec3f e = Vec3f::Zero();
      e[i] = 1.f;
      if (!test_axis(e.cross(Vec3f(R.col(j))))) return false;
    }
  return true;
}

}  // namespace detail

// Occupied = contains an aggregated point, or intersects an actor box at any
// trajectory keyframe; then dilated by one voxel in all directions.
template <class T>
OccupancyGrid build_occupancy_grid(const std::vector<Vec3f>& points, const SceneDesc<T>& scene,
                                   float voxel) {
  GA_CHECK(voxel > 0.f, ValueError, "voxel size must be positive");
  const Vec3f half = scene.bounds.half.template cast<float>();
  const Vec3f center = scene.bounds_center.template cast<float>();
  GA_CHECK((half.array() > 0.f).all(), ValueError, "empty scene bounds");
  Eigen::Vector3i dims;
  for (int i = 0; i < 3; ++i)
    dims[i] = std::max(1, static_cast<int>(std::ceil(2.0 * half[i] / voxel)));
  OccupancyGrid grid(center - half, voxel, dims);

  for (const auto& p : points) grid.mark_point(p);

  for (const auto& actor : scene.actors) {
    const Aabbf box{actor.box.half.template cast<float>()};
    for (const auto& [time, pose_t] : actor.trajectory.keys) {
      SE3Posef pose{pose_t.R.template cast<float>(), pose_t.t.template cast<float>()};
      // Conservative world AABB of the posed box, then exact per-voxel test.
      Vec3f radius = Vec3f::Zero();
      for (int i = 0; i < 3; ++i)
        radius += box.half[i] * pose.R.col(i).cwiseAbs();
      const Vec3f lo = pose.t - radius, hi = pose.t + radius;
      Eigen::Vector3i vlo, vhi;
      for (int i = 0; i < 3; ++i) {
        vlo[i] = std::max(0, static_cast<int>(std::floor((lo[i] - grid.min_corner()[i]) / voxel)));
        vhi[i] = std::min(dims[i] - 1,
                          static_cast<int>(std::floor((hi[i] - grid.min_corner()[i]) / voxel)));
      }
      for (int z = vlo.z(); z <= vhi.z(); ++z)
        for (int y = vlo.y(); y <= vhi.y(); ++y)
          for (int x = vlo.x(); x <= vhi.x(); ++x) {
            const Vec3f vmin = grid.min_corner() + voxel * Vec3f(static_cast<float>(x),
                                                                 static_cast<float>(y),
                                                                 static_cast<float>(z));
            const Vec3f vmax = vmin + Vec3f::Constant(voxel);
            if (detail::obb_aabb_overlap(box, pose, vmin, vmax)) grid.mark({x, y, z});
          }
    }
  }
  grid.dilate();
  return grid;
}

// ---------------------------------------------------------------------------
// Ray sampling: stratified at a fine step inside actor-box intervals and a
// coarse step elsewhere, dropping samples in unoccupied voxels.

struct SampleConfig {
  float fine_step = 0.05f;
  float coarse_step = 0.30f;
};

template <class T>
struct RaySamples {
  std::vector<T> depths;
  std::vector<int> field_ids;
};

template <class T>
RaySamples<T> sample_along_ray(const SceneDesc<T>& scene, const OccupancyGrid& grid,
                               const Ray<T>& ray, T time, const SampleConfig& cfg, Rng& rng) {
  RaySamples<T> out;
  Aabb<T> world_box{scene.bounds.half};
  SE3Pose<T> world_pose;
  world_pose.t = scene.bounds_center;
  const auto clip = ray_aabb_intersect(ray, world_box, world_pose);
  if (!clip) return out;
  const T t0 = clip->first, t1 = clip->second;
  if (!(t1 > t0)) return out;

  struct Interval {
    T a, b;
    int actor;
  };
  std::vector<Interval> actor_iv;
  for (std::size_t i = 0; i < scene.actors.size(); ++i) {
    const auto& actor = scene.actors[i];
    const auto iv = ray_aabb_intersect(ray, actor.box, actor.pose_at(time));
    if (!iv) continue;
    const T a = std::max(iv->first, t0), b = std::min(iv->second, t1);
    if (b > a) actor_iv.push_back({a, b, static_cast<int>(i)});
  }

  std::vector<T> cuts{t0, t1};
  for (const auto& iv : actor_iv) {
    cuts.push_back(iv.a);
    cuts.push_back(iv.b);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end(),
                         [](T a, T b) { return std::abs(a - b) < T(1e-7); }),
             cuts.end());

  auto emit = [&](T depth) {
    const Vec3<T> p = ray.at(depth);
    if (!grid.occupied_at(p.template cast<float>())) return;
    const Vec3<T> rel = p - scene.bounds_center;
    if (!((rel.cwiseAbs().array() <= scene.bounds.half.array()).all())) return;
    int field = kBackgroundField;
    T best_volume = T(0);
    for (const auto& iv : actor_iv) {
      if (depth < iv.a || depth > iv.b) continue;
      const auto& actor = scene.actors[static_cast<std::size_t>(iv.actor)];
      if (!actor.box.contains(actor.pose_at(time).inverse_apply(p))) continue;
      const T vol = actor.box.volume();
      if (field == kBackgroundField || vol < best_volume) {
        field = iv.actor;
        best_volume = vol;
      }
    }
    out.depths.push_back(depth);
    out.field_ids.push_back(field);
  };

  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const T a = cuts[s], b = cuts[s + 1];
    const T mid = (a + b) / T(2);
    bool fine = false;
    for (const auto& iv : actor_iv)
      if (mid >= iv.a && mid <= iv.b) {
        fine = true;
        break;
      }
    const T step = fine ? static_cast<T>(cfg.fine_step) : static_cast<T>(cfg.coarse_step);
    const std::int64_t n_full = static_cast<std::int64_t>(std::floor((b - a) / step));
    for (std::int64_t i = 0; i < n_full; ++i) {
      const T d = a + (static_cast<T>(i) + static_cast<T>(rng.uniform())) * step;
      if (d < b) emit(d);
    }
    const T rem_start = a + static_cast<T>(n_full) * step;
    if (b - rem_start > step * T(0.01)) {
      const T d = rem_start + static_cast<T>(rng.uniform()) * (b - rem_start);
      if (d < b) emit(d);
    }
  }

  // Stratification emits in order; guard against duplicates at cut points.
  for (std::size_t i = 1; i < out.depths.size(); ++i)
    if (!(out.depths[i] > out.depths[i - 1])) {
      out.depths.erase(out.depths.begin() + static_cast<std::ptrdiff_t>(i));
      out.field_ids.erase(out.field_ids.begin() + static_cast<std::ptrdiff_t>(i));
      --i;
    }
  return out;
}

}  // namespace ga
