// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "genassets/scene.hpp"

using namespace ga;

namespace {

TriPlane<float> constant_triplane(std::int64_t n, std::int64_t c, float v) {
  auto tp = TriPlane<float>::zeros(n, c, Vec3f::Ones());
  tp.xy = Tensorf::full({n, n, c}, v);
  tp.xz = Tensorf::full({n, n, c}, v);
  tp.yz = Tensorf::full({n, n, c}, v);
  return tp;
}

SceneDesc<float> simple_scene() {
  SceneDesc<float> scene;
  scene.bounds.half = Vec3f(5, 5, 5);
  ActorInstance<float> a;
  a.id = 0;
  a.box.half = Vec3f(1, 1, 1);
  a.trajectory.keys.push_back({0.f, SE3Posef::from_yaw(0.f, Vec3f(2, 0, 0))});
  scene.actors.push_back(a);
  ActorInstance<float> b;  // nested smaller box at the same centre
  b.id = 1;
  b.box.half = Vec3f(0.4f, 0.4f, 0.4f);
  b.trajectory.keys.push_back({0.f, SE3Posef::from_yaw(0.f, Vec3f(2, 0, 0))});
  scene.actors.push_back(b);
  return scene;
}

}  // namespace

TEST_CASE("triplane query: constants, nodes, cell centre") {
  auto tp = constant_triplane(4, 2, 3.5f);
  auto out = triplane_query(tp, Tensorf::from({2, 3}, {0.1f, -0.7f, 0.3f, 0.9f, 0.9f, -0.9f}));
  CHECK(out.shape() == Shape{2, 6});
  for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(3.5f));

  // Query exactly at a grid node returns the stored value.
  auto tp2 = TriPlane<float>::zeros(3, 1, Vec3f::Ones());
  std::vector<float> grid(9, 0.f);
  grid[4] = 7.f;  // centre node of the xy plane
  tp2.xy = Tensorf::from({3, 3, 1}, grid);
  auto at_node = triplane_query(tp2, Tensorf::from({1, 3}, {0.f, 0.f, 0.f}));
  CHECK(at_node.data()[0] == doctest::Approx(7.f));

  // 2x2 plane with corner values (0,1,2,3): centre interpolates to 1.5.
  auto tp3 = TriPlane<float>::zeros(2, 1, Vec3f::Ones());
  tp3.xy = Tensorf::from({2, 2, 1}, {0.f, 1.f, 2.f, 3.f});
  auto centre = triplane_query(tp3, Tensorf::from({1, 3}, {0.f, 0.f, 0.f}));
  CHECK(centre.data()[0] == doctest::Approx(1.5f));

  // Out-of-volume queries clamp to the boundary.
  auto clamped = triplane_query(tp3, Tensorf::from({1, 3}, {5.f, 5.f, 0.f}));
  auto edge = triplane_query(tp3, Tensorf::from({1, 3}, {1.f, 1.f, 0.f}));
  CHECK(clamped.data()[0] == edge.data()[0]);
}

TEST_CASE("triplane query is affine within a cell") {
  Rng rng(17);
  auto tp = TriPlane<float>::randn(5, 3, Vec3f::Ones(), rng, 1.f);
  // Segment along x inside one cell (cells span 0.5 in normalized [-1,1]).
  const float y = 0.13f, z = -0.22f;
  auto q = [&](float x) {
    return triplane_query(tp, Tensorf::from({1, 3}, {x, y, z}));
  };
  auto a = q(0.02f), b = q(0.2f), m = q(0.11f);
  for (std::int64_t c = 0; c < a.numel(); ++c)
    CHECK(m.data()[c] == doctest::Approx(0.5f * (a.data()[c] + b.data()[c])).epsilon(1e-4));
}

TEST_CASE("classify_point: boxes, background, nesting, bounds") {
  auto scene = simple_scene();
  // Inside the outer box only.
  auto [f1, l1] = classify_point(scene, Vec3f(2.8f, 0, 0), 0.f);
  CHECK(f1 == 0);
  CHECK(l1.x() == doctest::Approx(0.8f));
  // Outside all boxes: background, bounds-centred coordinates.
  auto [f2, l2] = classify_point(scene, Vec3f(-4.f, 1.f, 0.f), 0.f);
  CHECK(f2 == kBackgroundField);
  CHECK(l2.x() == doctest::Approx(-4.f));
  // Nested boxes: smaller volume wins.
  auto [f3, l3] = classify_point(scene, Vec3f(2.1f, 0.1f, 0.f), 0.f);
  CHECK(f3 == 1);
  CHECK_THROWS_AS(classify_point(scene, Vec3f(20.f, 0.f, 0.f), 0.f), ValueError);
}

TEST_CASE("occupancy grid: marking, dilation, boundary convention") {
  SceneDesc<float> scene;
  scene.bounds_center = Vec3f(2, 2, 2);
  scene.bounds.half = Vec3f(2, 2, 2);  // grid spans [0,4]^3
  auto grid = build_occupancy_grid({Vec3f(0.2f, 0.2f, 0.2f)}, scene, 0.5f);
  CHECK(grid.dims() == Eigen::Vector3i(8, 8, 8));
  // The marked voxel plus its full 3x3x3 dilation shell.
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const bool expect = x <= 1 && y <= 1 && z <= 1;
        CHECK(grid.occupied({x, y, z}) == expect);
      }

  auto empty = build_occupancy_grid({}, scene, 0.5f);
  CHECK(empty.occupied_count() == 0);

  // A point exactly on the voxel boundary belongs to the lower-index voxel.
  auto g2 = build_occupancy_grid({Vec3f(0.5f, 0.5f, 0.5f)}, scene, 0.5f);
  const auto idx = g2.voxel_of(Vec3f(0.5f, 0.5f, 0.5f));
  REQUIRE(idx.has_value());
  CHECK(*idx == Eigen::Vector3i(0, 0, 0));

  // Actor boxes mark their voxels at every keyframe.
  SceneDesc<float> scene2 = scene;
  ActorInstance<float> a;
  a.box.half = Vec3f(0.3f, 0.3f, 0.3f);
  a.trajectory.keys.push_back({0.f, SE3Posef::from_yaw(0.3f, Vec3f(3.f, 3.f, 3.f))});
  scene2.actors.push_back(a);
  auto g3 = build_occupancy_grid({}, scene2, 0.5f);
  CHECK(g3.occupied_at(Vec3f(3.f, 3.f, 3.f)));
  CHECK(!g3.occupied_at(Vec3f(0.4f, 0.4f, 0.4f)));

  CHECK_THROWS_AS(build_occupancy_grid({}, scene, 0.f), ValueError);
}

TEST_CASE("sample_along_ray: skipping, fine steps in boxes, stratification") {
  SceneDesc<float> scene;
  scene.bounds.half = Vec3f(6, 6, 6);
  ActorInstance<float> a;
  a.id = 0;
  a.box.half = Vec3f(0.25f, 1.f, 1.f);  // 0.5 m crossing along x
  a.trajectory.keys.push_back({0.f, SE3Posef::from_yaw(0.f, Vec3f(2.f, 0.f, 0.f))});
  scene.actors.push_back(a);

  SampleConfig cfg;
  cfg.fine_step = 0.05f;
  cfg.coarse_step = 0.30f;

  Rayf ray;
  ray.origin = Vec3f(-5.f, 0.f, 0.f);
  ray.dir = Vec3f(1.f, 0.f, 0.f);
  ray.tnear = 0.01f;
  ray.tfar = 20.f;

  SUBCASE("ray missing all occupied voxels has no samples") {
    auto grid = build_occupancy_grid({}, scene, 0.5f);  // nothing marked, actor marks though
    Rayf miss = ray;
    miss.origin = Vec3f(-5.f, 4.f, 4.f);
    Rng rng(1);
    auto s = sample_along_ray(scene, grid, miss, 0.f, cfg, rng);
    CHECK(s.depths.empty());
  }

  SUBCASE("actor crossing yields ~10 fine samples tagged with the actor") {
    auto grid = build_occupancy_grid({}, scene, 0.5f);
    Rng rng(2);
    auto s = sample_along_ray(scene, grid, ray, 0.f, cfg, rng);
    int actor_samples = 0;
    for (std::size_t i = 0; i < s.depths.size(); ++i) {
      if (s.field_ids[i] == 0) ++actor_samples;
      if (i) CHECK(s.depths[i] > s.depths[i - 1]);
    }
    CHECK(actor_samples >= 9);
    CHECK(actor_samples <= 11);
    // Every sample is inside an occupied voxel (postcondition restated).
    for (float d : s.depths) CHECK(grid.occupied_at(ray.at(d)));
  }

  SUBCASE("all-occupied grid with no actors reduces to coarse stratification") {
    SceneDesc<float> bare;
    bare.bounds.half = Vec3f(6, 6, 6);
    auto grid = build_occupancy_grid({}, bare, 0.5f);
    // Mark everything occupied.
    OccupancyGrid full(grid.min_corner(), grid.voxel(), grid.dims());
    full.mark_all();
    Rng rng(3);
    auto s = sample_along_ray(bare, full, ray, 0.f, cfg, rng);
    // Ray spans x in [-5, 6] texels clipped to bounds: length 11, minus the
    // near clip; expected count ~ length / coarse step.
    const float len = 11.f;
    const auto expect = static_cast<std::int64_t>(len / cfg.coarse_step);
    CHECK(std::abs(static_cast<std::int64_t>(s.depths.size()) - expect) <= 1);
    for (int id : s.field_ids) CHECK(id == kBackgroundField);
  }
}
