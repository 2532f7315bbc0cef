// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "genassets/tensor.hpp"

namespace ga {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers for one parameter tensor. Step count lives here so each
// parameter group can be driven at its own cadence.
template <class T>
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(std::int64_t numel)
      : m_(static_cast<std::size_t>(numel), T(0)), v_(static_cast<std::size_t>(numel), T(0)) {}

  std::int64_t step_count() const { return step_; }
  const std::vector<T>& m() const { return m_; }
  const std::vector<T>& v() const { return v_; }

  Tensor<T> step(const Tensor<T>& param, const Tensor<T>& grad, const AdamConfig& cfg) {
    GA_CHECK(param.shape() == grad.shape(), ShapeError, "adam: parameter/gradient shape mismatch");
    GA_CHECK(param.numel() == static_cast<std::int64_t>(m_.size()), ShapeError,
             "adam: state shape mismatch");
    ++step_;
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T bc1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(step_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(step_)));
    const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
    const std::int64_t n = param.numel();
    std::vector<T> out(static_cast<std::size_t>(n));
    const T* p = param.data();
    const T* g = grad.data();
    for (std::int64_t i = 0; i < n; ++i) {
      T& m = m_[static_cast<std::size_t>(i)];
      T& v = v_[static_cast<std::size_t>(i)];
      m = b1 * m + (T(1) - b1) * g[i];
      v = b2 * v + (T(1) - b2) * g[i] * g[i];
      const T mhat = m / bc1;
      const T vhat = v / bc2;
      out[static_cast<std::size_t>(i)] = p[i] - lr * mhat / (std::sqrt(vhat) + eps);
    }
    return Tensor<T>::from(param.shape(), std::move(out));
  }

 private:
  std::vector<T> m_, v_;
  std::int64_t step_ = 0;
};

}  // namespace ga
