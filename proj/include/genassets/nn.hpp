// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "genassets/ops.hpp"

namespace ga {

// Named pointers into layer-owned parameter tensors. One registry drives
// tape attachment, the optimizer and checkpoint (de)serialization, so the
// three can never disagree about what the trainable state is.
template <class T>
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor<T>* tensor;
    int group;
  };

  void add(std::string name, Tensor<T>* tensor, int group = 0) {
    GA_CHECK(tensor && tensor->defined(), ValueError, "registering undefined parameter " + name);
    entries_.push_back({std::move(name), tensor, group});
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void attach(Tape<T>& tape) {
    for (auto& e : entries_) *e.tensor = tape.watch(*e.tensor);
  }

  void detach_all() {
    for (auto& e : entries_) *e.tensor = e.tensor->detached();
  }

  std::int64_t total_numel() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor->numel();
    return n;
  }

 private:
  std::vector<Entry> entries_;
};

template <class T>
Tensor<T> he_normal(Shape shape, std::int64_t fan_in, Rng& rng) {
  const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  return Tensor<T>::randn(std::move(shape), rng, stddev);
}

template <class T>
struct Linear {
  Tensor<T> w, b;  // [in, out], [out]

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng) {
    w = he_normal<T>({in, out}, in, rng);
    b = Tensor<T>::zeros({out});
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, w, b); }

  void params(ParamRegistry<T>& r, const std::string& prefix, int group) {
    r.add(prefix + ".w", &w, group);
    r.add(prefix + ".b", &b, group);
  }
};

template <class T>
struct Conv2d {
  Tensor<T> w, b;  // [c_out, c_in*kh*kw], [c_out]
  std::int64_t kh = 3, kw = 3, stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(std::int64_t c_in, std::int64_t c_out, std::int64_t k, Rng& rng, std::int64_t stride_ = 1)
      : kh(k), kw(k), stride(stride_), pad(k / 2) {
    w = he_normal<T>({c_out, c_in * k * k}, c_in * k * k, rng);
    b = Tensor<T>::zeros({c_out});
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, kh, kw, stride, pad); }

  void params(ParamRegistry<T>& r, const std::string& prefix, int group) {
    r.add(prefix + ".w", &w, group);
    r.add(prefix + ".b", &b, group);
  }
};

template <class T>
struct GroupNorm {
  Tensor<T> gamma, beta;
  std::int64_t groups = 1;

  GroupNorm() = default;
  GroupNorm(std::int64_t channels, std::int64_t groups_) : groups(groups_) {
    gamma = Tensor<T>::full({channels}, T(1));
    beta = Tensor<T>::zeros({channels});
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return group_norm(x, gamma, beta, groups); }

  void params(ParamRegistry<T>& r, const std::string& prefix, int group) {
    r.add(prefix + ".gamma", &gamma, group);
    r.add(prefix + ".beta", &beta, group);
  }
};

inline std::int64_t norm_groups_for(std::int64_t channels) {
  for (std::int64_t g : {8, 4, 2, 1})
    if (channels % g == 0) return g;
  return 1;
}

// Norm + SiLU residual block with optional channel change and optional
// per-channel conditioning vector added between the convolutions.
template <class T>
struct ResBlock {
  GroupNorm<T> n1, n2;
  Conv2d<T> c1, c2;
  Conv2d<T> skip;  // 1x1 when channels change
  Linear<T> cond;  // projects conditioning embedding to c_out
  bool has_skip = false, has_cond = false;

  ResBlock() = default;
  ResBlock(std::int64_t c_in, std::int64_t c_out, std::int64_t k, Rng& rng,
           std::int64_t cond_dim = 0)
      : n1(c_in, norm_groups_for(c_in)),
        n2(c_out, norm_groups_for(c_out)),
        c1(c_in, c_out, k, rng),
        c2(c_out, c_out, k, rng) {
    if (c_in != c_out) {
      skip = Conv2d<T>(c_in, c_out, 1, rng);
      has_skip = true;
    }
    if (cond_dim > 0) {
      cond = Linear<T>(cond_dim, c_out, rng);
      has_cond = true;
    }
  }

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>* emb = nullptr) const {
    Tensor<T> h = c1(silu(n1(x)));
    if (has_cond) {
      GA_CHECK(emb != nullptr, ValueError, "conditioned ResBlock called without embedding");
      Tensor<T> e = cond(*emb);  // [1, c_out]
      h = add_channels(h, reshape(e, {e.numel()}));
    }
    h = c2(silu(n2(h)));
    return add(h, has_skip ? skip(x) : x);
  }

  void params(ParamRegistry<T>& r, const std::string& prefix, int group) {
    n1.params(r, prefix + ".n1", group);
    n2.params(r, prefix + ".n2", group);
    c1.params(r, prefix + ".c1", group);
    c2.params(r, prefix + ".c2", group);
    if (has_skip) skip.params(r, prefix + ".skip", group);
    if (has_cond) cond.params(r, prefix + ".cond", group);
  }
};

// Plain conv residual block (no norm), used by the image CNN.
template <class T>
struct PlainResBlock {
  Conv2d<T> c1, c2;

  PlainResBlock() = default;
  PlainResBlock(std::int64_t ch, std::int64_t k, Rng& rng) : c1(ch, ch, k, rng), c2(ch, ch, k, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return add(c2(relu(c1(x))), x); }

  void params(ParamRegistry<T>& r, const std::string& prefix, int group) {
    c1.params(r, prefix + ".c1", group);
    c2.params(r, prefix + ".c2", group);
  }
};

}  // namespace ga
