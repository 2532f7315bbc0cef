// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "genassets/nn.hpp"
#include "genassets/scene.hpp"

namespace ga {

// Sinusoidal encoding of unit directions: raw components plus sin/cos at
// doubling frequencies. Host-side constant; directions carry no gradients.
template <class T>
Tensor<T> encode_directions(const std::vector<Vec3<T>>& dirs, int freqs) {
  const std::int64_t n = static_cast<std::int64_t>(dirs.size());
  const std::int64_t width = 3 + 6 * freqs;
  std::vector<T> vals(static_cast<std::size_t>(n * width));
  for (std::int64_t i = 0; i < n; ++i) {
    T* row = vals.data() + i * width;
    for (int a = 0; a < 3; ++a) row[a] = dirs[static_cast<std::size_t>(i)][a];
    std::int64_t k = 3;
    for (int fq = 0; fq < freqs; ++fq) {
      const T scale = static_cast<T>(1 << fq);
      for (int a = 0; a < 3; ++a) {
        row[k++] = std::sin(scale * dirs[static_cast<std::size_t>(i)][a]);
        row[k++] = std::cos(scale * dirs[static_cast<std::size_t>(i)][a]);
      }
    }
  }
  return Tensor<T>::from({n, width}, std::move(vals));
}

inline std::int64_t direction_encoding_width(int freqs) { return 3 + 6 * freqs; }

// Field head: geometry MLP from interpolated triplane features to SDF plus a
// hidden vector, then an appearance MLP over hidden ⊕ encoded direction.
// SDF comes off the trunk before any direction enters, so geometry is
// view-independent by construction.
template <class T>
struct FieldHead {
  Linear<T> g1, g2;        // geometry trunk
  Linear<T> sdf_out;       // trunk -> SDF (metres)
  Linear<T> hid_out;       // trunk -> hidden
  Linear<T> a1, a2;        // appearance
  int dir_freqs = 4;
  std::int64_t feature_dim = 16;

  FieldHead() = default;
  FieldHead(std::int64_t tp_channels_3c, std::int64_t hidden, std::int64_t feature_dim_, Rng& rng,
            int dir_freqs_ = 4)
      : g1(tp_channels_3c, hidden, rng),
        g2(hidden, hidden, rng),
        sdf_out(hidden, 1, rng),
        hid_out(hidden, hidden, rng),
        a1(hidden + direction_encoding_width(dir_freqs_), hidden, rng),
        a2(hidden, feature_dim_, rng),
        dir_freqs(dir_freqs_),
        feature_dim(feature_dim_) {
    // Start with positive SDF everywhere (empty space) so early renders are
    // transparent and depth supervision pulls surfaces inward.
    sdf_out.b = Tensor<T>::full({1}, T(0.3));
  }

  struct Output {
    Tensor<T> sdf;      // [n, 1]
    Tensor<T> feature;  // [n, feature_dim]
  };

  Output query(const Tensor<T>& tp_feature, const Tensor<T>& dir_encoding) const {
    GA_CHECK(tp_feature.rank() == 2, ShapeError, "query_field: features must be [n, 3C]");
    check_finite(tp_feature, "query_field input");
    Tensor<T> h = softplus(g1(tp_feature));
    h = softplus(g2(h));
    Output out;
    out.sdf = sdf_out(h);
    Tensor<T> a = concat<T>({hid_out(h), dir_encoding}, 1);
    a = relu(a1(a));
    out.feature = a2(a);
    return out;
  }

  void params(ParamRegistry<T>& r, const std::string& prefix, int group) {
    g1.params(r, prefix + ".g1", group);
    g2.params(r, prefix + ".g2", group);
    sdf_out.params(r, prefix + ".sdf_out", group);
    hid_out.params(r, prefix + ".hid_out", group);
    a1.params(r, prefix + ".a1", group);
    a2.params(r, prefix + ".a2", group);
  }
};

// Logistic surface-crossing opacity. b is the logistic scale in metres.
template <class T>
struct OpacityConfig {
  T b = T(0.1);

  void validate() const { GA_CHECK(b > T(0), ValueError, "opacity sharpness b must be positive"); }
};

struct AlphaSegments {
  std::vector<std::int64_t> sample_offsets;  // input samples per segment
  std::vector<std::int64_t> alpha_offsets;   // resulting alphas per segment
};

// alpha_t = clamp((sig(s_t/b) - sig(s_{t+1}/b)) / max(sig(s_t/b), 1e-6), 0, 1)
// for consecutive sample pairs within each segment. Segments shorter than two
// samples produce no alphas.
template <class T>
std::pair<Tensor<T>, AlphaSegments> sdf_to_alpha_segments(
    const Tensor<T>& sdf, const std::vector<std::int64_t>& sample_offsets,
    const OpacityConfig<T>& cfg) {
  cfg.validate();
  GA_CHECK(sdf.rank() == 2 && sdf.dim(1) == 1, ShapeError, "sdf_to_alpha: sdf must be [n,1]");
  check_offsets(sample_offsets, sdf.dim(0));

  AlphaSegments seg;
  seg.sample_offsets = sample_offsets;
  seg.alpha_offsets.assign(1, 0);
  std::vector<std::int64_t> idx_t, idx_t1;
  for (std::size_t s = 0; s + 1 < sample_offsets.size(); ++s) {
    const std::int64_t a = sample_offsets[s], b = sample_offsets[s + 1];
    for (std::int64_t r = a; r + 1 < b; ++r) {
      idx_t.push_back(r);
      idx_t1.push_back(r + 1);
    }
    seg.alpha_offsets.push_back(static_cast<std::int64_t>(idx_t.size()));
  }

  if (idx_t.empty()) return {Tensor<T>::zeros({0}), seg};

  Tensor<T> sig = sigmoid(mul(sdf, T(1) / cfg.b));
  Tensor<T> sig_flat = reshape(sig, {sig.dim(0)});
  Tensor<T> st = index_select(sig_flat, idx_t);
  Tensor<T> st1 = index_select(sig_flat, idx_t1);
  Tensor<T> alpha = clamp(div(sub(st, st1), cwise_max(st, T(1e-6))), T(0), T(1));
  return {alpha, seg};
}

// Single-ray form matching the two-sample minimum contract.
template <class T>
Tensor<T> sdf_to_alpha(const Tensor<T>& sdf, const OpacityConfig<T>& cfg) {
  GA_CHECK(sdf.rank() == 2 && sdf.dim(1) == 1, ShapeError, "sdf_to_alpha: sdf must be [n,1]");
  GA_CHECK(sdf.dim(0) >= 2, ValueError, "sdf_to_alpha: need at least 2 samples");
  auto [alpha, seg] = sdf_to_alpha_segments(sdf, {0, sdf.dim(0)}, cfg);
  return alpha;
}

}  // namespace ga
