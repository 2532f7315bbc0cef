// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "genassets/image_io.hpp"
#include "genassets/synthdata.hpp"

using namespace ga;
namespace fs = std::filesystem;

namespace {

DatasetSpec tiny_spec() {
  DatasetSpec spec;
  spec.scenes = 2;
  spec.actors_per_scene = 2;
  spec.train_frames = 4;
  spec.heldout_frames = 2;
  spec.image_size = 32;
  spec.lidar_azimuth = 24;
  spec.lidar_elevation = 6;
  spec.seed = 99;
  return spec;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("same seed gives byte-identical dataset manifests") {
  const auto dir = fs::temp_directory_path() / "ga_synth_determinism";
  fs::remove_all(dir);
  auto ds1 = make_dataset(tiny_spec());
  auto ds2 = make_dataset(tiny_spec());
  render_ground_truth(ds1);
  render_ground_truth(ds2);
  write_dataset(ds1, (dir / "a").string());
  write_dataset(ds2, (dir / "b").string());
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
  CHECK(slurp(dir / "a" / "scene_000" / "scene.json") ==
        slurp(dir / "b" / "scene_000" / "scene.json"));
  CHECK(slurp(dir / "a" / "scene_000" / "images" / "f000.png") ==
        slurp(dir / "b" / "scene_000" / "images" / "f000.png"));
  CHECK(slurp(dir / "a" / "scene_000" / "sweeps" / "f000.ply") ==
        slurp(dir / "b" / "scene_000" / "sweeps" / "f000.ply"));
  fs::remove_all(dir);
}

TEST_CASE("registry has one unique id per actor") {
  DatasetSpec spec = tiny_spec();
  spec.scenes = 4;
  spec.actors_per_scene = 2;
  auto ds = make_dataset(spec);
  REQUIRE(ds.registry.size() == 8);
  std::set<int> ids;
  for (const auto& e : ds.registry) ids.insert(e.global_id);
  CHECK(ids.size() == 8);
}

TEST_CASE("azimuth-constrained dataset never observes an actor's back hemisphere") {
  DatasetSpec spec = tiny_spec();
  spec.azimuth_range_deg = 90.f;
  auto ds = make_dataset(spec);
  for (const auto& rec : ds.scenes) {
    for (int f = 0; f < rec.desc.rig.frame_count(); ++f) {
      if (rec.splits[static_cast<std::size_t>(f)].heldout) continue;
      for (const auto& actor : rec.desc.actors) {
        const float az = synth::view_azimuth(
            actor.pose_at(rec.desc.rig.frame_times[static_cast<std::size_t>(f)]),
            rec.desc.rig.camera_poses[static_cast<std::size_t>(f)].t);
        CHECK(std::abs(az) <= 90.f * 3.14159265f / 180.f + 1e-4f);
      }
    }
    // Held-out frames do look at the back arc.
    bool any_back = false;
    for (int f = 0; f < rec.desc.rig.frame_count(); ++f) {
      if (!rec.splits[static_cast<std::size_t>(f)].heldout) continue;
      for (const auto& actor : rec.desc.actors) {
        const float az = synth::view_azimuth(
            actor.pose_at(rec.desc.rig.frame_times[static_cast<std::size_t>(f)]),
            rec.desc.rig.camera_poses[static_cast<std::size_t>(f)].t);
        if (std::abs(az) > 3.14159265f / 2) any_back = true;
      }
    }
    CHECK(any_back);
  }
}

TEST_CASE("oracle: sphere depth, occlusion ordering, empty scene") {
  SceneDesc<float> scene;
  scene.bounds.half = Vec3f(12, 12, 12);
  scene.rig.camera.width = 16;
  scene.rig.camera.height = 16;
  scene.rig.camera.focal_px = 16;
  scene.rig.camera.cx = 8;
  scene.rig.camera.cy = 8;
  scene.rig.camera_poses = {synth::look_at(Vec3f(0, 0, 0), Vec3f(5, 0, 0))};
  scene.rig.lidar_poses = {SE3Posef{scene.rig.camera_poses[0].R * synth::cam_from_lidar(),
                                    scene.rig.camera_poses[0].t}};
  scene.rig.frame_times = {0.f};
  scene.rig.ray_near = 0.1f;
  scene.rig.ray_far = 30.f;
  scene.rig.lidar.n_azimuth = 8;
  scene.rig.lidar.n_elevation = 1;
  scene.rig.lidar.elevation_min = 0.f;
  scene.rig.lidar.elevation_max = 0.f;

  GtScene gt;
  Primitive sphere;
  sphere.shape = PrimShape::kSphere;
  sphere.dims = Vec3f::Constant(1.f);
  sphere.pose.t = Vec3f(5, 0, 0);
  sphere.albedo = Vec3f(0.8f, 0.2f, 0.2f);
  sphere.albedo_top = sphere.albedo;
  gt.background.push_back(sphere);

  GtField field(scene, gt, 0.f);
  Rayf ray;
  ray.origin = Vec3f(0, 0, 0);
  ray.dir = Vec3f(1, 0, 0);
  ray.tnear = 0.1f;
  ray.tfar = 30.f;
  auto hit = field.trace(ray);
  REQUIRE(hit.hit);
  CHECK(std::abs(hit.depth - 4.0f) <= 1e-3f);

  // Second sphere behind the first: front object wins.
  Primitive sphere2 = sphere;
  sphere2.pose.t = Vec3f(9, 0, 0);
  sphere2.albedo = Vec3f(0, 1, 0);
  GtScene gt2 = gt;
  gt2.background.push_back(sphere2);
  GtField field2(scene, gt2, 0.f);
  auto hit2 = field2.trace(ray);
  REQUIRE(hit2.hit);
  CHECK(std::abs(hit2.depth - 4.0f) <= 1e-3f);
  // Its colour comes from the red front sphere, not the green one.
  CHECK(hit2.color.x() > hit2.color.y());

  // Empty scene: sky pixels and zero LiDAR returns.
  GtScene empty;
  auto img = oracle_render_image(scene, empty, 0);
  const Vec3f sky = sky_color(1.f);
  for (const auto& px : img.rgb) CHECK((px - sky).norm() == 0.f);
  for (auto m : img.mask) CHECK(m == 0);
  auto sweep = oracle_render_lidar(scene, empty, 0);
  for (std::size_t i = 0; i < sweep.hit.size(); ++i) CHECK(!sweep.hit[i]);
}

TEST_CASE("oracle depth equals per-primitive minimum on random rays") {
  auto ds = make_dataset(tiny_spec());
  const auto& rec = ds.scenes[0];
  GtField field(rec.desc, rec.gt, 0.f);
  Rng rng(4);
  int tested = 0;
  for (int i = 0; i < 2000; ++i) {
    Rayf ray;
    ray.origin = Vec3f(static_cast<float>(rng.uniform(-6, 6)),
                       static_cast<float>(rng.uniform(-6, 6)),
                       static_cast<float>(rng.uniform(0.5, 3.5)));
    Vec3<double> dd(rng.normal(), rng.normal(), rng.normal());
    ray.dir = dd.normalized().cast<float>();
    ray.tnear = 0.05f;
    ray.tfar = 25.f;
    const auto hit = field.trace(ray);
    if (!hit.hit) continue;
    ++tested;
    // Brute force: march each primitive independently at fine resolution and
    // take the earliest surface crossing over all primitives.
    float best = 1e9f;
    auto march_prim = [&](const Primitive& prim, const SE3Posef& pose) {
      float prev = sdf_primitive(prim, pose.inverse_apply(ray.at(ray.tnear)));
      for (float t = ray.tnear; t <= ray.tfar; t += 2e-3f) {
        const float d = sdf_primitive(prim, pose.inverse_apply(ray.at(t)));
        if ((prev > 0 && d <= 0) || d <= 1e-4f) {
          best = std::min(best, t);
          return;
        }
        prev = d;
      }
    };
    for (const auto& prim : rec.gt.background) march_prim(prim, prim.pose);
    for (std::size_t a = 0; a < rec.gt.actor_prims.size(); ++a)
      march_prim(rec.gt.actor_prims[a], rec.desc.actors[a].pose_at(0.f));
    CHECK(std::abs(hit.depth - best) <= 4e-3f);
  }
  CHECK(tested > 100);
}

TEST_CASE("lidar points lie on primitive surfaces") {
  auto ds = make_dataset(tiny_spec());
  render_ground_truth(ds);
  for (const auto& rec : ds.scenes) {
    GtField field(rec.desc, rec.gt, rec.desc.rig.frame_times[0]);
    int count = 0;
    for (const auto& ret : rec.sweeps[0]) {
      if (!ret.hit) continue;
      CHECK(std::abs(field.sdf(ret.point)) <= 1e-3f);
      ++count;
    }
    CHECK(count > 0);
  }
}

TEST_CASE("dataset round-trip preserves manifests, images and sweeps") {
  const auto dir = fs::temp_directory_path() / "ga_synth_roundtrip";
  const auto dir2 = fs::temp_directory_path() / "ga_synth_roundtrip2";
  fs::remove_all(dir);
  fs::remove_all(dir2);
  auto ds = make_dataset(tiny_spec());
  render_ground_truth(ds);
  write_dataset(ds, dir.string());
  auto back = read_dataset(dir.string());
  REQUIRE(back.scenes.size() == ds.scenes.size());
  CHECK(back.registry.size() == ds.registry.size());
  CHECK(back.spec.seed == ds.spec.seed);

  // PNG decode equals the original up to 8-bit quantization.
  const auto& a = ds.scenes[0].images[0];
  const auto& b = back.scenes[0].images[0];
  REQUIRE(a.shape() == b.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    CHECK(std::abs(a.data()[i] - b.data()[i]) <= 0.5f / 255.f + 1e-6f);

  // Sweeps preserve hits, indices and depths.
  const auto& sa = ds.scenes[0].sweeps[1];
  const auto& sb = back.scenes[0].sweeps[1];
  REQUIRE(sa.size() == sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    CHECK(sa[i].hit == sb[i].hit);
    if (sa[i].hit) {
      CHECK(sb[i].depth == doctest::Approx(sa[i].depth).epsilon(1e-5));
      CHECK(sa[i].actor == sb[i].actor);
    }
  }

  // Re-writing the reloaded dataset gives byte-identical files.
  write_dataset(back, dir2.string());
  CHECK(slurp(dir / "scene_001" / "scene.json") == slurp(dir2 / "scene_001" / "scene.json"));
  CHECK(slurp(dir / "scene_001" / "sweeps" / "f002.ply") ==
        slurp(dir2 / "scene_001" / "sweeps" / "f002.ply"));
  CHECK(slurp(dir / "scene_001" / "images" / "f001.png") ==
        slurp(dir2 / "scene_001" / "images" / "f001.png"));
  CHECK(slurp(dir / "scene_001" / "depth.gaft") == slurp(dir2 / "scene_001" / "depth.gaft"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("corrupted containers fail with versioned errors, no partial load") {
  const auto dir = fs::temp_directory_path() / "ga_synth_corrupt";
  fs::remove_all(dir);
  auto ds = make_dataset(tiny_spec());
  render_ground_truth(ds);
  write_dataset(ds, dir.string());

  const auto depth_path = dir / "scene_000" / "depth.gaft";
  std::fstream f(depth_path, std::ios::binary | std::ios::in | std::ios::out);
  f.write("ZZZZ", 4);
  f.close();
  CHECK_THROWS_AS(read_dataset(dir.string()), IoError);

  fs::remove(dir / "manifest.json");
  CHECK_THROWS_AS(read_dataset(dir.string()), MissingPrerequisite);
  fs::remove_all(dir);
}

TEST_CASE("infeasible placement errors out after bounded retries") {
  DatasetSpec spec = tiny_spec();
  spec.actors_per_scene = 64;
  CHECK_THROWS_AS(make_dataset(spec), ValueError);
}
