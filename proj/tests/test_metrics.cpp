// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "genassets/metrics.hpp"
#include "genassets/rng.hpp"

using namespace ga;

TEST_CASE("psnr closed-form cases") {
  Rng rng(1);
  auto a = Tensorf::uniform({8, 8, 3}, rng, 0.f, 1.f);
  CHECK(psnr(a, a) == kPsnrCap);

  auto half = Tensorf::full({8, 8, 3}, 0.5f);
  auto zero = Tensorf::zeros({8, 8, 3});
  CHECK(psnr(half, zero) == doctest::Approx(6.0206).epsilon(1e-4));

  // Mask covering only equal pixels caps at 99 even when unmasked differ.
  auto b = a;
  std::vector<float> mod = b.vals();
  mod[0] = mod[0] > 0.5f ? 0.f : 1.f;
  b = Tensorf::from(b.shape(), mod);
  std::vector<std::uint8_t> mask(64, 1);
  mask[0] = 0;
  CHECK(psnr(a, b, &mask) == kPsnrCap);
  CHECK(psnr(a, b) < kPsnrCap);

  CHECK(psnr(a, b) == psnr(b, a));  // symmetry
  std::vector<std::uint8_t> empty_mask(64, 0);
  CHECK_THROWS_AS(psnr(a, b, &empty_mask), ValueError);
  CHECK_THROWS_AS(psnr(a, Tensorf::zeros({4, 4, 3})), ShapeError);
}

namespace {

// Scalar-window brute-force SSIM for one centre position, matching the
// production constants.
double ssim_window_oracle(const Tensorf& a, const Tensorf& b, int cy, int cx) {
  const std::int64_t w = a.dim(1), ch = a.dim(2);
  double kernel[11];
  double ks = 0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5.0;
    kernel[i] = std::exp(-x * x / (2 * 1.5 * 1.5));
    ks += kernel[i];
  }
  for (auto& k : kernel) k /= ks;
  double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
  for (int dy = -5; dy <= 5; ++dy)
    for (int dx = -5; dx <= 5; ++dx) {
      const double wt = kernel[dy + 5] * kernel[dx + 5];
      double va = 0, vb = 0;
      for (std::int64_t c = 0; c < ch; ++c) {
        va += a.data()[((cy + dy) * w + (cx + dx)) * ch + c];
        vb += b.data()[((cy + dy) * w + (cx + dx)) * ch + c];
      }
      va /= static_cast<double>(ch);
      vb /= static_cast<double>(ch);
      mu_a += wt * va;
      mu_b += wt * vb;
      aa += wt * va * va;
      bb += wt * vb * vb;
      ab += wt * va * vb;
    }
  const double c1 = 1e-4, c2 = 9e-4;
  return ((2 * mu_a * mu_b + c1) * (2 * (ab - mu_a * mu_b) + c2)) /
         ((mu_a * mu_a + mu_b * mu_b + c1) *
          ((aa - mu_a * mu_a) + (bb - mu_b * mu_b) + c2));
}

}  // namespace

TEST_CASE("ssim: identity, brute-force oracle, constant images") {
  Rng rng(3);
  auto a = Tensorf::uniform({11, 11, 3}, rng, 0.f, 1.f);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));

  // Image vs itself scaled by 0.5: single valid window equals the oracle.
  std::vector<float> scaled = a.vals();
  for (auto& v : scaled) v *= 0.5f;
  auto b = Tensorf::from(a.shape(), scaled);
  CHECK(ssim(a, b) == doctest::Approx(ssim_window_oracle(a, b, 5, 5)).epsilon(1e-9));
  CHECK(ssim(a, b) == ssim(b, a));

  // Constant vs constant: only the luminance term differs from 1.
  auto c1 = Tensorf::full({16, 16, 3}, 0.25f);
  auto c2 = Tensorf::full({16, 16, 3}, 0.75f);
  const double l =
      (2 * 0.25 * 0.75 + 1e-4) / (0.25 * 0.25 + 0.75 * 0.75 + 1e-4);
  CHECK(ssim(c1, c2) == doctest::Approx(l).epsilon(1e-6));

  CHECK_THROWS_AS(ssim(Tensorf::zeros({8, 8, 3}), Tensorf::zeros({8, 8, 3})), ShapeError);
}

TEST_CASE("depth_l1 cases") {
  std::vector<bool> hit_a = {true, true, true, false};
  std::vector<float> da = {1.f, 2.f, 3.f, 9.f};
  CHECK(depth_l1(hit_a, da, hit_a, da) == 0.0);

  std::vector<float> db = {1.5f, 2.5f, 3.5f, 0.f};
  CHECK(depth_l1(hit_a, da, hit_a, db) == doctest::Approx(0.5));

  // Half the rays dropped in one sweep: mean over the co-valid half only.
  std::vector<bool> hit_b = {true, false, true, false};
  std::vector<float> db2 = {2.f, 0.f, 4.f, 0.f};
  CHECK(depth_l1(hit_a, da, hit_b, db2) == doctest::Approx(1.0));

  // Order of scan indices does not matter (set semantics over indices).
  std::vector<bool> hit_r = {false, true, true, true};
  std::vector<float> dr = {0.f, 3.f, 2.f, 1.f};
  CHECK(depth_l1(hit_a, da, hit_r, dr) == depth_l1(hit_r, dr, hit_a, da));

  std::vector<bool> none = {false, false, false, false};
  CHECK_THROWS_AS(depth_l1(hit_a, da, none, db), ValueError);
}

TEST_CASE("latent_frechet closed forms") {
  Rng rng(5);
  std::vector<std::vector<float>> a;
  for (int i = 0; i < 64; ++i) {
    std::vector<float> v(4);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    a.push_back(v);
  }
  CHECK(latent_frechet(a, a) <= 1e-6);

  // Shifted by a vector of norm d with identical covariance: distance d^2.
  std::vector<std::vector<float>> b = a;
  const float d = 1.7f;
  for (auto& v : b) v[0] += d;
  CHECK(latent_frechet(a, b) == doctest::Approx(d * d).epsilon(1e-3));
  CHECK(latent_frechet(a, b) == doctest::Approx(latent_frechet(b, a)).epsilon(1e-9));

  // 1-D N(0,1) vs N(0,4): closed form (sigma_a - sigma_b)^2 = 1.
  std::vector<std::vector<float>> n1, n4;
  Rng rng2(6);
  for (int i = 0; i < 10000; ++i) {
    n1.push_back({static_cast<float>(rng2.normal())});
    n4.push_back({static_cast<float>(2.0 * rng2.normal())});
  }
  CHECK(latent_frechet(n1, n4) == doctest::Approx(1.0).epsilon(0.08));
}
