// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "genassets/checkpoint.hpp"
#include "genassets/gradcheck.hpp"

using namespace ga;
namespace fs = std::filesystem;

TEST_CASE("reparameterize: limits, seeded draws, moments") {
  Rng rng(1);
  LatentCode<float> code;
  code.mu = Tensorf::randn({2, 2, 3}, rng);
  code.logvar = Tensorf::full({2, 2, 3}, -80.f);  // sigma -> 0

  auto c = reparameterize(code, 7);
  for (std::int64_t i = 0; i < c.numel(); ++i)
    CHECK(c.data()[i] == doctest::Approx(code.mu.data()[i]).epsilon(1e-6));

  // mu = 0, sigma = 1: the sample equals the seeded standard-normal draw.
  LatentCode<float> std_code;
  std_code.mu = Tensorf::zeros({2, 2, 3});
  std_code.logvar = Tensorf::zeros({2, 2, 3});
  auto draw = reparameterize(std_code, 42);
  Rng ref(42);
  auto expect = Tensorf::randn({2, 2, 3}, ref);
  for (std::int64_t i = 0; i < draw.numel(); ++i) CHECK(draw.data()[i] == expect.data()[i]);

  // Empirical mean/var over 1e4 draws at mu = 1, sigma = 2.
  LatentCode<float> mc;
  mc.mu = Tensorf::full({1, 1, 1}, 1.f);
  mc.logvar = Tensorf::full({1, 1, 1}, std::log(4.f));
  double sum = 0, sq = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double v = reparameterize(mc, 1000 + static_cast<std::uint64_t>(i)).item();
    sum += v;
    sq += v * v;
  }
  const double mean_v = sum / n;
  const double var_v = sq / n - mean_v * mean_v;
  CHECK(mean_v == doctest::Approx(1.0).epsilon(0.05));
  CHECK(var_v == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("kl_loss closed forms and non-negativity") {
  LatentCode<float> std_code;
  std_code.mu = Tensorf::zeros({2, 2, 2});
  std_code.logvar = Tensorf::zeros({2, 2, 2});
  CHECK(kl_loss(std_code).item() == doctest::Approx(0.0).epsilon(1e-9));

  LatentCode<float> ones;
  ones.mu = Tensorf::full({2, 2, 2}, 1.f);
  ones.logvar = Tensorf::zeros({2, 2, 2});
  CHECK(kl_loss(ones).item() == doctest::Approx(0.5).epsilon(1e-6));

  LatentCode<float> wide;  // sigma^2 = e
  wide.mu = Tensorf::zeros({2, 2, 2});
  wide.logvar = Tensorf::full({2, 2, 2}, 1.f);
  CHECK(kl_loss(wide).item() == doctest::Approx((std::exp(1.0) - 2.0) / 2.0).epsilon(1e-5));

  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    LatentCode<float> r;
    r.mu = Tensorf::randn({2, 2, 2}, rng);
    r.logvar = Tensorf::uniform({2, 2, 2}, rng, -3.f, 2.f);
    CHECK(kl_loss(r).item() >= 0.f);
  }
}

TEST_CASE("decode_latent: shapes, determinism, class only via embedding") {
  Rng rng(3);
  AssetDecoder<float> dec(4, 6, 16, 5, rng);
  auto code = Tensorf::randn({4, 4, 6}, rng);
  auto emb = Tensorf::randn({4, 4, 6}, rng);
  const Vec3f extent(1.2f, 0.7f, 0.5f);
  auto tp1 = decode_latent(dec, code, emb, extent);
  auto tp2 = decode_latent(dec, code, emb, extent);
  CHECK(tp1.xy.shape() == Shape{16, 16, 5});
  CHECK(tp1.xz.shape() == Shape{16, 16, 5});
  CHECK(tp1.yz.shape() == Shape{16, 16, 5});
  for (std::int64_t i = 0; i < tp1.xy.numel(); ++i)
    CHECK(tp1.xy.data()[i] == tp2.xy.data()[i]);

  // Same class embedding and same code: identical decodes regardless of
  // which actor asked.
  auto tp3 = decode_latent(dec, code, emb, extent);
  for (std::int64_t i = 0; i < tp1.yz.numel(); ++i)
    CHECK(tp1.yz.data()[i] == tp3.yz.data()[i]);

  CHECK_THROWS_AS(decode_latent(dec, Tensorf::zeros({4, 4, 5}), emb, extent), ShapeError);
}

TEST_CASE("decode_latent gradient w.r.t. the code matches finite differences") {
  Rng rng(5);
  AssetDecoder<double> dec(2, 3, 4, 2, rng);
  auto emb = Tensord::randn({2, 2, 3}, rng);
  auto code = Tensord::randn({2, 2, 3}, rng);
  const double err = grad_check<double>(
      [&](const Tensord& c) {
        auto tp = dec.decode(c, emb, Vec3<double>::Ones());
        return add(add(sum(tp.xy), sum(tp.xz)), sum(tp.yz));
      },
      code, 1e-5);
  CHECK(err <= 1e-3);
}

TEST_CASE("recon_loss arithmetic and breakdown") {
  LossWeights<float> w;  // lambda_lid = 0.01, lambda_kl = 1e-5
  ReconLossInputs<float> in;
  in.observed_rgb = Tensorf::full({4, 4, 3}, 0.5f);
  in.rendered_rgb = in.observed_rgb;
  auto [zero_loss, bd0] = recon_loss(in, w);
  CHECK(zero_loss.item() == 0.f);
  CHECK(!bd0.perp_computed);
  CHECK(!bd0.adv_computed);

  // RGB off by 0.1 everywhere: mean squared error 0.01.
  in.rendered_rgb = Tensorf::full({4, 4, 3}, 0.6f);
  auto [rgb_loss, bd1] = recon_loss(in, w);
  CHECK(rgb_loss.item() == doctest::Approx(0.01).epsilon(1e-5));
  CHECK(bd1.rgb == doctest::Approx(0.01).epsilon(1e-5));

  // Depth off by 1 m on every return with perfect rgb: 0.01 * 1.
  in.rendered_rgb = in.observed_rgb;
  in.rendered_depth = Tensorf::full({8}, 5.f);
  in.observed_depth.assign(8, 4.f);
  auto [lid_loss, bd2] = recon_loss(in, w);
  CHECK(lid_loss.item() == doctest::Approx(0.01).epsilon(1e-5));
  CHECK(bd2.lid == doctest::Approx(1.0).epsilon(1e-6));
}

namespace {

SyntheticDataset toy_dataset() {
  DatasetSpec spec;
  spec.scenes = 1;
  spec.actors_per_scene = 1;
  spec.train_frames = 6;
  spec.heldout_frames = 0;
  spec.image_size = 64;
  spec.lidar_azimuth = 48;
  spec.lidar_elevation = 8;
  spec.actor_drift = false;
  spec.seed = 12;
  auto ds = make_dataset(spec);
  render_ground_truth(ds);
  return ds;
}

Stage1Config toy_config() {
  Stage1Config cfg;
  cfg.actor_res = 16;
  cfg.background_res = 32;
  cfg.latent_res = 4;
  cfg.latent_channels = 8;
  cfg.feature_dim = 8;
  cfg.cnn_width = 12;
  cfg.steps = 500;
  cfg.lidar_rays_per_step = 96;
  cfg.log_every = 100;
  return cfg;
}

}  // namespace

TEST_CASE("toy training drives the photometric loss down 4x") {
  auto ds = toy_dataset();
  auto cfg = toy_config();
  auto model = Stage1Model<float>::init(cfg, ds, 21);
  Stage1Trainer<float> trainer(model, ds, 33);
  double initial = -1, final_avg = 0;
  double first_avg = 0;
  int warm = 10;
  for (int s = 0; s < cfg.steps; ++s) {
    auto bd = trainer.step(s);
    if (s < warm) first_avg += bd.rgb / warm;
    if (s >= cfg.steps - warm) final_avg += bd.rgb / warm;
    if (s == 0) initial = bd.rgb;
  }
  CAPTURE(initial);
  CAPTURE(first_avg);
  CAPTURE(final_avg);
  CHECK(final_avg < 0.25 * first_avg);
}

TEST_CASE("training is deterministic and checkpoints round-trip bit-exactly") {
  auto ds = toy_dataset();
  auto cfg = toy_config();
  cfg.steps = 12;

  auto run = [&](std::uint64_t seed) {
    auto model = Stage1Model<float>::init(cfg, ds, seed);
    Stage1Trainer<float> trainer(model, ds, seed + 1);
    for (int s = 0; s < cfg.steps; ++s) trainer.step(s);
    return model;
  };
  auto m1 = run(5), m2 = run(5);
  auto r1 = m1.registry(), r2 = m2.registry();
  REQUIRE(r1.entries().size() == r2.entries().size());
  for (std::size_t i = 0; i < r1.entries().size(); ++i) {
    const auto& t1 = *r1.entries()[i].tensor;
    const auto& t2 = *r2.entries()[i].tensor;
    REQUIRE(t1.numel() == t2.numel());
    for (std::int64_t k = 0; k < t1.numel(); ++k) CHECK(t1.data()[k] == t2.data()[k]);
  }

  // Save, load, render: bit-identical image.
  const auto dir = fs::temp_directory_path() / "ga_ckpt_test";
  fs::create_directories(dir);
  const auto path = (dir / "stage1.gaft").string();
  save_stage1(path, m1, cfg.steps, {});
  auto loaded = load_stage1(path);

  auto grids = build_scene_grids<float>(cfg, ds);
  FieldBank<float> bank1 = scene_field_bank(m1, ds, 0, -1);
  FieldBank<float> bank2 = scene_field_bank(loaded, ds, 0, -1);
  const RenderConfig<float> rc = m1.render_config();
  auto v1 = render_view(ds.scenes[0].desc, grids[0], bank1, m1.cnn, 0, rc, 3);
  auto v2 = render_view(ds.scenes[0].desc, grids[0], bank2, loaded.cnn, 0, rc, 3);
  REQUIRE(v1.rgb.numel() == v2.rgb.numel());
  for (std::int64_t i = 0; i < v1.rgb.numel(); ++i)
    CHECK(v1.rgb.data()[i] == v2.rgb.data()[i]);
  fs::remove_all(dir);
}

TEST_CASE("latent library collects per-actor means with class and tod") {
  auto ds = toy_dataset();
  auto cfg = toy_config();
  auto model = Stage1Model<float>::init(cfg, ds, 2);
  auto lib = latent_library(model, ds);
  REQUIRE(lib.codes.size() == ds.registry.size());
  CHECK(lib.class_ids[0] == ds.registry[0].class_id);
  CHECK(lib.codes[0].shape() == Shape{cfg.latent_res, cfg.latent_res, cfg.latent_channels});
}
