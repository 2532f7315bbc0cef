// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "genassets/geom.hpp"

namespace ga {

// Pinhole model, CV convention: +z forward, +x right, +y down, square pixels.
template <class T>
struct Pinhole {
  T focal_px = T(100);
  T cx = T(64), cy = T(64);
  int width = 128, height = 128;

  bool valid() const { return focal_px > T(0) && width > 0 && height > 0; }
};

// Spinning-scanner pattern: the cross product of azimuth and elevation
// angles, in the sensor frame (+x forward, +y left, +z up).
template <class T>
struct LidarPattern {
  int n_azimuth = 64;
  int n_elevation = 16;
  T azimuth_start = T(0);                    // radians; full turn is covered
  T elevation_min = T(-0.35), elevation_max = T(0.15);

  int count() const { return n_azimuth * n_elevation; }

  Vec3<T> direction(int az_idx, int el_idx) const {
    const T az = azimuth_start +
                 T(2) * T(3.14159265358979323846) * static_cast<T>(az_idx) / static_cast<T>(n_azimuth);
    const T el = n_elevation == 1
                     ? (elevation_min + elevation_max) / T(2)
                     : elevation_min + (elevation_max - elevation_min) * static_cast<T>(el_idx) /
                                           static_cast<T>(n_elevation - 1);
    return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
  }
};

// One camera and one LiDAR on a shared platform, posed per frame.
template <class T>
struct SensorRig {
  Pinhole<T> camera;
  LidarPattern<T> lidar;
  std::vector<SE3Pose<T>> camera_poses;  // world_from_camera per frame
  std::vector<SE3Pose<T>> lidar_poses;   // world_from_lidar per frame
  std::vector<T> frame_times;
  T ray_near = T(0.05);
  T ray_far = T(50);

  int frame_count() const { return static_cast<int>(frame_times.size()); }

  void check_frame(int frame) const {
    GA_CHECK(frame >= 0 && frame < frame_count(), ValueError, "frame index out of range");
  }

  T time_of(int frame) const {
    check_frame(frame);
    return frame_times[static_cast<std::size_t>(frame)];
  }
};

using SensorRigf = SensorRig<float>;

// One ray per texel at full resolution divided by `downsample`, through texel
// centres, in the world frame. Row-major texel order.
template <class T>
std::vector<Ray<T>> camera_rays(const SensorRig<T>& rig, int frame, int downsample = 1) {
  rig.check_frame(frame);
  GA_CHECK(downsample >= 1 && rig.camera.width % downsample == 0 &&
               rig.camera.height % downsample == 0,
           ValueError, "downsample must divide the camera resolution");
  const auto& pose = rig.camera_poses[static_cast<std::size_t>(frame)];
  const T f = rig.camera.focal_px / static_cast<T>(downsample);
  const T cx = rig.camera.cx / static_cast<T>(downsample);
  const T cy = rig.camera.cy / static_cast<T>(downsample);
  const int w = rig.camera.width / downsample;
  const int h = rig.camera.height / downsample;

  std::vector<Ray<T>> rays;
  rays.reserve(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      Vec3<T> d_cam((static_cast<T>(u) + T(0.5) - cx) / f, (static_cast<T>(v) + T(0.5) - cy) / f,
                    T(1));
      d_cam.normalize();
      Ray<T> r;
      r.origin = pose.t;
      r.dir = pose.rotate(d_cam);
      r.tnear = rig.ray_near;
      r.tfar = rig.ray_far;
      r.modality = Modality::kCamera;
      rays.push_back(r);
    }
  }
  return rays;
}

// One ray per (elevation, azimuth) pair; elevation-major order so scan index
// e * n_azimuth + a is stable across frames.
template <class T>
std::vector<Ray<T>> lidar_rays(const SensorRig<T>& rig, int frame) {
  rig.check_frame(frame);
  const auto& pose = rig.lidar_poses[static_cast<std::size_t>(frame)];
  std::vector<Ray<T>> rays;
  rays.reserve(static_cast<std::size_t>(rig.lidar.count()));
  for (int e = 0; e < rig.lidar.n_elevation; ++e) {
    for (int a = 0; a < rig.lidar.n_azimuth; ++a) {
      Ray<T> r;
      r.origin = pose.t;
      r.dir = pose.rotate(rig.lidar.direction(a, e));
      r.tnear = rig.ray_near;
      r.tfar = rig.ray_far;
      r.modality = Modality::kLidar;
      rays.push_back(r);
    }
  }
  return rays;
}

}  // namespace ga
