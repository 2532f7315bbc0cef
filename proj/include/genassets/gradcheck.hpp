// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "genassets/ops.hpp"

namespace ga {

// Compares the tape gradient of fn at `point` against central differences.
// Returns max over coordinates of |analytic - fd| / (|fd| + 1e-8).
//
// fn receives an attached tensor and must return a scalar on the same tape.
template <class T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& fn, const Tensor<T>& point,
                  T step) {
  GA_CHECK(step > T(0), ValueError, "grad_check: step must be positive");

  Tape<T> tape;
  Tensor<T> x = tape.watch(point);
  Tensor<T> loss = fn(x);
  GA_CHECK(loss.numel() == 1, ShapeError, "grad_check: fn must return a scalar");
  GA_CHECK(std::isfinite(static_cast<double>(loss.item())), NumericError,
           "grad_check: fn returned non-finite value");
  tape.backward(loss);
  Tensor<T> analytic = tape.grad(x);

  const std::int64_t n = point.numel();
  double worst = 0.0;
  std::vector<T> vals = point.vals();
  for (std::int64_t i = 0; i < n; ++i) {
    const T orig = vals[static_cast<std::size_t>(i)];
    vals[static_cast<std::size_t>(i)] = orig + step;
    const double fp = static_cast<double>(fn(Tensor<T>::from(point.shape(), vals)).item());
    vals[static_cast<std::size_t>(i)] = orig - step;
    const double fm = static_cast<double>(fn(Tensor<T>::from(point.shape(), vals)).item());
    vals[static_cast<std::size_t>(i)] = orig;
    GA_CHECK(std::isfinite(fp) && std::isfinite(fm), NumericError,
             "grad_check: fn returned non-finite value");
    const double fd = (fp - fm) / (2.0 * static_cast<double>(step));
    const double err = std::abs(static_cast<double>(analytic.data()[i]) - fd) /
                       (std::abs(fd) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace ga
