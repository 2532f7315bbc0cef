// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "genassets/tensor.hpp"

namespace ga {

inline constexpr double kPsnrCap = 99.0;

// 10*log10(1/MSE) over (optionally masked) pixels; identical inputs cap at
// kPsnrCap. Mask is per-pixel (H*W), nonzero = include.
inline double psnr(const Tensorf& a, const Tensorf& b,
                   const std::vector<std::uint8_t>* mask = nullptr) {
  GA_CHECK(a.shape() == b.shape(), ShapeError, "psnr: shape mismatch");
  GA_CHECK(a.rank() == 3, ShapeError, "psnr: expected [H,W,C]");
  const std::int64_t pixels = a.dim(0) * a.dim(1), ch = a.dim(2);
  if (mask)
    GA_CHECK(static_cast<std::int64_t>(mask->size()) == pixels, ShapeError,
             "psnr: mask size mismatch");
  double se = 0.0;
  std::int64_t counted = 0;
  for (std::int64_t p = 0; p < pixels; ++p) {
    if (mask && (*mask)[static_cast<std::size_t>(p)] == 0) continue;
    for (std::int64_t c = 0; c < ch; ++c) {
      const double d = static_cast<double>(a.data()[p * ch + c]) - b.data()[p * ch + c];
      se += d * d;
    }
    ++counted;
  }
  GA_CHECK(counted > 0, ValueError, "psnr: empty mask");
  const double mse = se / static_cast<double>(counted * ch);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// Windowed SSIM, 11x11 Gaussian (sigma 1.5), k1=0.01, k2=0.03, L=1, on the
// channel-mean grayscale image; mean over valid window centres.
inline double ssim(const Tensorf& a, const Tensorf& b) {
  GA_CHECK(a.shape() == b.shape(), ShapeError, "ssim: shape mismatch");
  GA_CHECK(a.rank() == 3, ShapeError, "ssim: expected [H,W,C]");
  const std::int64_t h = a.dim(0), w = a.dim(1), ch = a.dim(2);
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  GA_CHECK(h >= kWin && w >= kWin, ShapeError, "ssim: image smaller than window");

  auto gray = [&](const Tensorf& t) {
    std::vector<double> g(static_cast<std::size_t>(h * w));
    for (std::int64_t p = 0; p < h * w; ++p) {
      double s = 0.0;
      for (std::int64_t c = 0; c < ch; ++c) s += t.data()[p * ch + c];
      g[static_cast<std::size_t>(p)] = s / static_cast<double>(ch);
    }
    return g;
  };
  const std::vector<double> ga_ = gray(a), gb_ = gray(b);

  double kernel[kWin];
  double ksum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - (kWin - 1) / 2.0;
    kernel[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    ksum += kernel[i];
  }
  for (auto& k : kernel) k /= ksum;

  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int r = kWin / 2;
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t y = r; y < h - r; ++y) {
    for (std::int64_t x = r; x < w - r; ++x) {
      double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const double wgt = kernel[dy + r] * kernel[dx + r];
          const double va = ga_[static_cast<std::size_t>((y + dy) * w + (x + dx))];
          const double vb = gb_[static_cast<std::size_t>((y + dy) * w + (x + dx))];
          mu_a += wgt * va;
          mu_b += wgt * vb;
          aa += wgt * va * va;
          bb += wgt * vb * vb;
          ab += wgt * va * vb;
        }
      }
      const double var_a = aa - mu_a * mu_a;
      const double var_b = bb - mu_b * mu_b;
      const double cov = ab - mu_a * mu_b;
      const double s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                       ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      total += s;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// Mean |d - d_gt| over scan indices where both sweeps report a hit.
inline double depth_l1(const std::vector<bool>& hit_a, const std::vector<float>& depth_a,
                       const std::vector<bool>& hit_b, const std::vector<float>& depth_b) {
  GA_CHECK(hit_a.size() == depth_a.size() && hit_b.size() == depth_b.size() &&
               hit_a.size() == hit_b.size(),
           ShapeError, "depth_l1: sweep size mismatch");
  double total = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < hit_a.size(); ++i) {
    if (!hit_a[i] || !hit_b[i]) continue;
    total += std::abs(static_cast<double>(depth_a[i]) - depth_b[i]);
    ++n;
  }
  GA_CHECK(n > 0, ValueError, "depth_l1: no co-valid returns");
  return total / static_cast<double>(n);
}

// Fréchet distance between Gaussian fits of two sample sets (rows = samples):
// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), with eps*I regularization.
inline double latent_frechet(const std::vector<std::vector<float>>& a,
                             const std::vector<std::vector<float>>& b, double eps = 1e-6) {
  GA_CHECK(a.size() >= 2 && b.size() >= 2, ValueError, "latent_frechet: need >= 2 samples each");
  const std::size_t dim = a[0].size();
  GA_CHECK(dim >= 1 && b[0].size() == dim, ShapeError, "latent_frechet: dimension mismatch");

  auto moments = [dim](const std::vector<std::vector<float>>& s, Eigen::VectorXd& mu,
                       Eigen::MatrixXd& cov) {
    const auto n = static_cast<Eigen::Index>(s.size());
    Eigen::MatrixXd X(n, static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < n; ++i) {
      GA_CHECK(s[static_cast<std::size_t>(i)].size() == dim, ShapeError,
               "latent_frechet: ragged samples");
      for (std::size_t j = 0; j < dim; ++j)
        X(i, static_cast<Eigen::Index>(j)) = s[static_cast<std::size_t>(i)][j];
    }
    mu = X.colwise().mean();
    const Eigen::MatrixXd centered = X.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(n - 1);
  };

  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  moments(a, mu_a, cov_a);
  moments(b, mu_b, cov_b);
  const auto d = static_cast<Eigen::Index>(dim);
  cov_a += eps * Eigen::MatrixXd::Identity(d, d);
  cov_b += eps * Eigen::MatrixXd::Identity(d, d);

  // Tr((Sa Sb)^{1/2}) via the symmetric form Sa^{1/2} Sb Sa^{1/2}.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(cov_a);
  const Eigen::MatrixXd sqrt_a = es_a.operatorSqrt();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_m(sqrt_a * cov_b * sqrt_a);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < d; ++i)
    tr_sqrt += std::sqrt(std::max(0.0, es_m.eigenvalues()[i]));

  const double dist = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, dist);
}

}  // namespace ga
