// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <optional>
#include <utility>
#include <vector>

#include "genassets/common.hpp"

namespace ga {

template <class T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <class T>
using Mat3 = Eigen::Matrix<T, 3, 3>;

using Vec3f = Vec3<float>;
using Vec3d = Vec3<double>;

// Rigid transform world_from_local: p_world = R * p_local + t.
template <class T>
struct SE3Pose {
  Mat3<T> R = Mat3<T>::Identity();
  Vec3<T> t = Vec3<T>::Zero();

  static SE3Pose identity() { return {}; }

  static SE3Pose from_yaw(T yaw, Vec3<T> translation = Vec3<T>::Zero()) {
    SE3Pose p;
    p.R = Eigen::AngleAxis<T>(yaw, Vec3<T>::UnitZ()).toRotationMatrix();
    p.t = std::move(translation);
    return p;
  }

  bool valid(T tol = T(1e-6)) const {
    return ((R.transpose() * R) - Mat3<T>::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(R.determinant() - T(1)) <= tol;
  }

  Vec3<T> apply(const Vec3<T>& p) const { return R * p + t; }
  Vec3<T> rotate(const Vec3<T>& v) const { return R * v; }
  Vec3<T> inverse_apply(const Vec3<T>& p) const { return R.transpose() * (p - t); }

  SE3Pose inverse() const { return {R.transpose(), -(R.transpose() * t)}; }

  SE3Pose compose(const SE3Pose& other) const {  // this ∘ other
    return {R * other.R, R * other.t + t};
  }

  template <class U>
  SE3Pose<U> cast() const {
    return {R.template cast<U>(), t.template cast<U>()};
  }
};

using SE3Posef = SE3Pose<float>;
using SE3Posed = SE3Pose<double>;

// Linear translation / slerp rotation blend, s in [0,1].
template <class T>
SE3Pose<T> interpolate(const SE3Pose<T>& a, const SE3Pose<T>& b, T s) {
  Eigen::Quaternion<T> qa(a.R), qb(b.R);
  SE3Pose<T> out;
  out.R = qa.slerp(s, qb).toRotationMatrix();
  out.t = (T(1) - s) * a.t + s * b.t;
  return out;
}

// Keyframed pose track with strictly increasing times; queries clamp to the
// ends and interpolate between neighbours.
template <class T>
struct PoseTrack {
  std::vector<std::pair<T, SE3Pose<T>>> keys;

  void validate() const {
    GA_CHECK(!keys.empty(), ValueError, "pose track must have at least one keyframe");
    for (std::size_t i = 1; i < keys.size(); ++i)
      GA_CHECK(keys[i].first > keys[i - 1].first, ValueError,
               "pose track times must be strictly increasing");
  }

  SE3Pose<T> at(T time) const {
    GA_CHECK(!keys.empty(), ValueError, "empty pose track");
    if (time <= keys.front().first || keys.size() == 1) return keys.front().second;
    if (time >= keys.back().first) return keys.back().second;
    std::size_t hi = 1;
    while (keys[hi].first < time) ++hi;
    const auto& [t0, p0] = keys[hi - 1];
    const auto& [t1, p1] = keys[hi];
    return interpolate(p0, p1, (time - t0) / (t1 - t0));
  }
};

// Axis-aligned box given by half-extents, centred at the origin of its frame.
template <class T>
struct Aabb {
  Vec3<T> half = Vec3<T>::Ones();

  bool valid() const { return (half.array() > T(0)).all(); }
  T volume() const { return T(8) * half.prod(); }
  bool contains(const Vec3<T>& p) const { return (p.cwiseAbs().array() <= half.array()).all(); }
};

using Aabbf = Aabb<float>;

enum class Modality { kCamera, kLidar };

template <class T>
struct Ray {
  Vec3<T> origin;
  Vec3<T> dir;  // unit
  T tnear = T(0);
  T tfar = T(1);
  Modality modality = Modality::kCamera;

  Vec3<T> at(T h) const { return origin + h * dir; }
};

using Rayf = Ray<float>;

// Slab test against a posed box; the returned interval is clipped to
// [tnear, tfar]. Empty optional when the ray misses.
template <class T>
std::optional<std::pair<T, T>> ray_aabb_intersect(const Ray<T>& ray, const Aabb<T>& box,
                                                  const SE3Pose<T>& box_pose) {
  const Vec3<T> o = box_pose.inverse_apply(ray.origin);
  const Vec3<T> d = box_pose.R.transpose() * ray.dir;
  T t0 = ray.tnear, t1 = ray.tfar;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < T(1e-12)) {
      if (std::abs(o[i]) > box.half[i]) return std::nullopt;
      continue;
    }
    T ta = (-box.half[i] - o[i]) / d[i];
    T tb = (box.half[i] - o[i]) / d[i];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

}  // namespace ga
