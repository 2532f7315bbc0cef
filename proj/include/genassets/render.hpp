// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "genassets/fields.hpp"

namespace ga {

template <class T>
struct RenderConfig {
  SampleConfig sampling;
  OpacityConfig<T> opacity{T(0.1)};
  T tau_sky = T(0.5);   // below this accumulated opacity a texel gets sky fill
  T tau_hit = T(0.5);   // minimum accumulated opacity for a LiDAR return
  int feature_downsample = 4;
};

// Flattened per-ray sample lists for one batch of rays.
template <class T>
struct SampledRays {
  std::vector<std::int64_t> offsets;  // n_rays + 1
  std::vector<T> depths;
  std::vector<int> field_ids;
  std::vector<Vec3<T>> positions;    // world frame, per sample
  std::vector<Vec3<T>> directions;   // world frame, per sample (unit)

  std::int64_t ray_count() const { return static_cast<std::int64_t>(offsets.size()) - 1; }
  std::int64_t sample_count() const { return static_cast<std::int64_t>(depths.size()); }
};

template <class T>
SampledRays<T> sample_rays(const SceneDesc<T>& scene, const OccupancyGrid& grid,
                           const std::vector<Ray<T>>& rays, T time, const SampleConfig& cfg,
                           std::uint64_t seed) {
  SampledRays<T> out;
  out.offsets.assign(1, 0);
  for (std::size_t ri = 0; ri < rays.size(); ++ri) {
    Rng rng = Rng::child(seed, {static_cast<std::uint64_t>(ri)});
    RaySamples<T> s = sample_along_ray(scene, grid, rays[ri], time, cfg, rng);
    for (std::size_t k = 0; k < s.depths.size(); ++k) {
      out.depths.push_back(s.depths[k]);
      out.field_ids.push_back(s.field_ids[k]);
      out.positions.push_back(rays[ri].at(s.depths[k]));
      out.directions.push_back(rays[ri].dir);
    }
    out.offsets.push_back(static_cast<std::int64_t>(out.depths.size()));
  }
  return out;
}

template <class T>
struct RayRenderResult {
  Tensor<T> feature;  // [n_rays, C_f]
  Tensor<T> depth;    // [n_rays]
  Tensor<T> acc;      // [n_rays] accumulated opacity
};

// Evaluates the field provider over samples grouped per field, reassembles
// flat per-sample SDF/features, converts SDF to alpha and composites.
//
// Provider signature:
//   FieldHead<T>::Output operator()(int field_id,
//                                   const Tensor<T>& points_local,   // [n,3]
//                                   const std::vector<Vec3<T>>& dirs_local)
template <class T, class Provider>
RayRenderResult<T> render_sampled(const SceneDesc<T>& scene, const SampledRays<T>& samples, T time,
                                  Provider&& provider, const RenderConfig<T>& cfg,
                                  std::int64_t feature_dim) {
  const std::int64_t n_rays = samples.ray_count();
  const std::int64_t n_samples = samples.sample_count();

  RayRenderResult<T> out;
  if (n_samples == 0) {
    out.feature = Tensor<T>::zeros({n_rays, feature_dim});
    out.depth = Tensor<T>::zeros({n_rays});
    out.acc = Tensor<T>::zeros({n_rays});
    return out;
  }

  // Group flat sample rows by field id (background first, then actors in
  // index order) so each field is one batched provider call.
  std::vector<std::vector<std::int64_t>> groups(scene.actors.size() + 1);
  for (std::int64_t i = 0; i < n_samples; ++i) {
    const int f = samples.field_ids[static_cast<std::size_t>(i)];
    groups[static_cast<std::size_t>(f + 1)].push_back(i);
  }

  std::vector<std::int64_t> grouped_to_flat;
  grouped_to_flat.reserve(static_cast<std::size_t>(n_samples));
  std::vector<Tensor<T>> sdf_parts, feat_parts;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& rows = groups[gi];
    if (rows.empty()) continue;
    const int field_id = static_cast<int>(gi) - 1;
    const std::int64_t n = static_cast<std::int64_t>(rows.size());

    SE3Pose<T> pose;
    Vec3<T> origin_shift = Vec3<T>::Zero();
    if (field_id >= 0) {
      pose = scene.actors[static_cast<std::size_t>(field_id)].pose_at(time);
    } else {
      origin_shift = scene.bounds_center;
    }
    std::vector<T> pts(static_cast<std::size_t>(n) * 3);
    std::vector<Vec3<T>> dirs(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k) {
      const auto& pw = samples.positions[static_cast<std::size_t>(rows[static_cast<std::size_t>(k)])];
      const auto& dw = samples.directions[static_cast<std::size_t>(rows[static_cast<std::size_t>(k)])];
      Vec3<T> pl, dl;
      if (field_id >= 0) {
        pl = pose.inverse_apply(pw);
        dl = pose.R.transpose() * dw;
      } else {
        pl = pw - origin_shift;
        dl = dw;
      }
      pts[static_cast<std::size_t>(k * 3 + 0)] = pl.x();
      pts[static_cast<std::size_t>(k * 3 + 1)] = pl.y();
      pts[static_cast<std::size_t>(k * 3 + 2)] = pl.z();
      dirs[static_cast<std::size_t>(k)] = dl;
    }
    auto res = provider(field_id, Tensor<T>::from({n, 3}, std::move(pts)), dirs);
    GA_CHECK(res.sdf.rank() == 2 && res.sdf.dim(0) == n && res.sdf.dim(1) == 1, ShapeError,
             "provider returned bad sdf shape");
    GA_CHECK(res.feature.rank() == 2 && res.feature.dim(0) == n &&
                 res.feature.dim(1) == feature_dim,
             ShapeError, "provider returned bad feature shape");
    sdf_parts.push_back(res.sdf);
    feat_parts.push_back(res.feature);
    grouped_to_flat.insert(grouped_to_flat.end(), rows.begin(), rows.end());
  }

  Tensor<T> sdf_grouped = concat<T>(sdf_parts, 0);
  Tensor<T> feat_grouped = concat<T>(feat_parts, 0);

  // Permutation taking grouped rows back to flat sample order.
  std::vector<std::int64_t> flat_from_grouped(static_cast<std::size_t>(n_samples));
  for (std::size_t g = 0; g < grouped_to_flat.size(); ++g)
    flat_from_grouped[static_cast<std::size_t>(grouped_to_flat[g])] = static_cast<std::int64_t>(g);
  Tensor<T> sdf = index_select(sdf_grouped, flat_from_grouped);
  Tensor<T> feat = index_select(feat_grouped, flat_from_grouped);

  auto [alpha, seg] = sdf_to_alpha_segments(sdf, samples.offsets, cfg.opacity);
  if (alpha.numel() == 0) {
    out.feature = Tensor<T>::zeros({n_rays, feature_dim});
    out.depth = Tensor<T>::zeros({n_rays});
    out.acc = Tensor<T>::zeros({n_rays});
    return out;
  }
  Tensor<T> weights = alpha_composite(alpha, seg.alpha_offsets);

  // Rows carrying alphas: every sample except each ray's last.
  std::vector<std::int64_t> alpha_rows;
  std::vector<T> alpha_depths;
  alpha_rows.reserve(static_cast<std::size_t>(alpha.numel()));
  for (std::size_t s = 0; s + 1 < samples.offsets.size(); ++s)
    for (std::int64_t r = samples.offsets[s]; r + 1 < samples.offsets[s + 1]; ++r) {
      alpha_rows.push_back(r);
      alpha_depths.push_back(samples.depths[static_cast<std::size_t>(r)]);
    }

  Tensor<T> feat_at_alpha = index_select(feat, alpha_rows);
  Tensor<T> weighted_feat = mul_rows(feat_at_alpha, weights);
  out.feature = segment_sum(weighted_feat, seg.alpha_offsets);

  const std::int64_t n_alpha = static_cast<std::int64_t>(alpha_depths.size());
  Tensor<T> h = Tensor<T>::from({n_alpha}, std::move(alpha_depths));
  out.depth = segment_sum(mul(weights, h), seg.alpha_offsets);
  out.acc = segment_sum(weights, seg.alpha_offsets);
  return out;
}

template <class T, class Provider>
RayRenderResult<T> render_rays(const SceneDesc<T>& scene, const OccupancyGrid& grid,
                               const std::vector<Ray<T>>& rays, T time, Provider&& provider,
                               const RenderConfig<T>& cfg, std::int64_t feature_dim,
                               std::uint64_t seed) {
  const SampledRays<T> samples = sample_rays(scene, grid, rays, time, cfg.sampling, seed);
  return render_sampled(scene, samples, time, std::forward<Provider>(provider), cfg, feature_dim);
}

// Constant sky feature composited into texels whose accumulated opacity
// stays below tau_sky.
template <class T>
Tensor<T> composite_sky(const Tensor<T>& feature, const Tensor<T>& acc, const Tensor<T>& sky,
                        T tau_sky) {
  const std::int64_t n = feature.dim(0);
  GA_CHECK(sky.rank() == 1 && sky.dim(0) == feature.dim(1), ShapeError,
           "sky feature width mismatch");
  std::vector<T> mask_vals(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    mask_vals[static_cast<std::size_t>(i)] = acc.data()[i] < tau_sky ? T(1) : T(0);
  Tensor<T> mask = Tensor<T>::from({n}, std::move(mask_vals));
  Tensor<T> scale = mul(sub(T(1), acc), mask);  // (1 - acc) on masked texels
  Tensor<T> contribution = matmul(reshape(scale, {n, 1}), reshape(sky, {1, sky.dim(0)}));
  return add(feature, contribution);
}

// ---------------------------------------------------------------------------
// Feature-map decoder CNN: residual blocks with two 2x upsampling stages,
// C_f channels in, RGB out through a sigmoid, 4x spatial upsampling total.

template <class T>
struct RgbCnn {
  Conv2d<T> conv_in;
  std::vector<PlainResBlock<T>> blocks;
  Conv2d<T> conv_out;
  std::int64_t width = 16;
  std::int64_t kernel = 3;

  RgbCnn() = default;
  RgbCnn(std::int64_t c_in, std::int64_t width_, std::int64_t kernel_, Rng& rng)
      : width(width_), kernel(kernel_) {
    conv_in = Conv2d<T>(c_in, width, 1, rng);
    for (int i = 0; i < 6; ++i) blocks.emplace_back(width, kernel, rng);
    conv_out = Conv2d<T>(width, 3, 1, rng);
  }

  // fm is [C_f, H_f, W_f]; returns [3, 4H_f, 4W_f] in [0,1].
  Tensor<T> operator()(const Tensor<T>& fm) const {
    Tensor<T> h = conv_in(fm);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      h = blocks[i](h);
      if (i == 1 || i == 3) h = upsample2x(h);
    }
    return sigmoid(conv_out(h));
  }

  void params(ParamRegistry<T>& r, const std::string& prefix, int group) {
    conv_in.params(r, prefix + ".conv_in", group);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].params(r, prefix + ".block" + std::to_string(i), group);
    conv_out.params(r, prefix + ".conv_out", group);
  }
};

template <class T>
Tensor<T> decode_image(const RgbCnn<T>& cnn, const Tensor<T>& feature_map_hwc) {
  GA_CHECK(feature_map_hwc.rank() == 3, ShapeError, "decode_image: feature map must be [H,W,C]");
  Tensor<T> chw = permute(feature_map_hwc, {2, 0, 1});
  Tensor<T> rgb = cnn(chw);  // [3, 4H, 4W]
  return permute(rgb, {1, 2, 0});
}

// ---------------------------------------------------------------------------
// Neural field bank: the learnable state the renderer consumes.

template <class T>
struct FieldBank {
  TriPlane<T> background;
  std::vector<TriPlane<T>> actor_planes;  // by actor index within the scene
  const FieldHead<T>* head = nullptr;
  Tensor<T> sky_feature;  // [C_f]

  FieldHead<T>::Output query(int field_id, const Tensor<T>& pts, const std::vector<Vec3<T>>& dirs) const {
    const TriPlane<T>& tp =
        field_id < 0 ? background : actor_planes[static_cast<std::size_t>(field_id)];
    Tensor<T> tp_feat = triplane_query(tp, pts);
    return head->query(tp_feat, encode_directions(dirs, head->dir_freqs));
  }

  auto provider() const {
    return [this](int field_id, const Tensor<T>& pts, const std::vector<Vec3<T>>& dirs) {
      return query(field_id, pts, dirs);
    };
  }
};

template <class T>
struct FeatureMapRender {
  Tensor<T> feature;  // [H_f, W_f, C_f], sky composited
  Tensor<T> depth;    // [H_f, W_f]
  Tensor<T> acc;      // [H_f, W_f]
  int height = 0, width = 0;
};

template <class T>
FeatureMapRender<T> render_feature_map(const SceneDesc<T>& scene, const OccupancyGrid& grid,
                                       const FieldBank<T>& bank, int frame,
                                       const RenderConfig<T>& cfg, std::uint64_t seed) {
  const auto rays = camera_rays(scene.rig, frame, cfg.feature_downsample);
  const int wf = scene.rig.camera.width / cfg.feature_downsample;
  const int hf = scene.rig.camera.height / cfg.feature_downsample;
  const T time = scene.rig.time_of(frame);
  const std::int64_t cf = bank.head->feature_dim;
  RayRenderResult<T> rr = render_rays(scene, grid, rays, time, bank.provider(), cfg, cf, seed);
  FeatureMapRender<T> out;
  out.feature = reshape(composite_sky(rr.feature, rr.acc, bank.sky_feature, cfg.tau_sky),
                        {hf, wf, cf});
  out.depth = reshape(rr.depth, {hf, wf});
  out.acc = reshape(rr.acc, {hf, wf});
  out.height = hf;
  out.width = wf;
  return out;
}

template <class T>
struct RenderedView {
  Tensor<T> rgb;    // [H, W, 3] in [0,1]
  Tensor<T> depth;  // [H_f, W_f] expected depth
  Tensor<T> acc;    // [H_f, W_f]
};

template <class T>
RenderedView<T> render_view(const SceneDesc<T>& scene, const OccupancyGrid& grid,
                            const FieldBank<T>& bank, const RgbCnn<T>& cnn, int frame,
                            const RenderConfig<T>& cfg, std::uint64_t seed) {
  FeatureMapRender<T> fm = render_feature_map(scene, grid, bank, frame, cfg, seed);
  RenderedView<T> out;
  out.rgb = decode_image(cnn, fm.feature);
  out.depth = fm.depth;
  out.acc = fm.acc;
  return out;
}

// One optional depth per scan direction; returns below tau_hit are dropped.
template <class T>
struct LidarRender {
  std::vector<bool> hit;        // per scan index
  std::vector<T> depth;         // per scan index, valid where hit
  std::vector<Vec3<T>> points;  // world-frame points for the hits only
  Tensor<T> depth_tensor;       // [n_rays] raw composited depths (training path)
  Tensor<T> acc_tensor;         // [n_rays]
};

template <class T, class Provider>
LidarRender<T> render_lidar_rays(const SceneDesc<T>& scene, const OccupancyGrid& grid,
                                 const std::vector<Ray<T>>& rays, T time, Provider&& provider,
                                 const RenderConfig<T>& cfg, std::int64_t feature_dim,
                                 std::uint64_t seed) {
  RayRenderResult<T> rr =
      render_rays(scene, grid, rays, time, std::forward<Provider>(provider), cfg, feature_dim, seed);
  LidarRender<T> out;
  out.depth_tensor = rr.depth;
  out.acc_tensor = rr.acc;
  out.hit.resize(rays.size());
  out.depth.resize(rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const T a = rr.acc.data()[static_cast<std::int64_t>(i)];
    const T d = rr.depth.data()[static_cast<std::int64_t>(i)];
    out.hit[i] = a >= cfg.tau_hit;
    out.depth[i] = d;
    if (out.hit[i]) out.points.push_back(rays[i].at(d));
  }
  return out;
}

template <class T>
LidarRender<T> render_lidar(const SceneDesc<T>& scene, const OccupancyGrid& grid,
                            const FieldBank<T>& bank, int frame, const RenderConfig<T>& cfg,
                            std::uint64_t seed) {
  const auto rays = lidar_rays(scene.rig, frame);
  return render_lidar_rays(scene, grid, rays, scene.rig.time_of(frame), bank.provider(), cfg,
                           bank.head->feature_dim, seed);
}

}  // namespace ga
