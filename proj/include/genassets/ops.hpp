// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable free functions over Tensor<T>. Each op computes its value
// eagerly and, when an input is attached to a tape, records a backward
// closure. Backward closures capture shared payloads, never raw pointers.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "genassets/tensor.hpp"

namespace ga {

namespace detail {

template <class T>
using CMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using Map = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using CMat = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using Mat = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class T>
Tape<T>* pick_tape(const Tensor<T>& a) {
  return a.tape();
}

template <class T>
Tape<T>* pick_tape(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.tape() && b.tape())
    GA_CHECK(a.tape() == b.tape(), ValueError, "operands attached to different tapes");
  return a.tape() ? a.tape() : b.tape();
}

template <class T>
Tape<T>* pick_tape(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
  Tape<T>* t = pick_tape(a, b);
  if (t && c.tape())
    GA_CHECK(t == c.tape(), ValueError, "operands attached to different tapes");
  return t ? t : c.tape();
}

template <class T>
Tensor<T> finish(Tensor<T> out, const char* what) {
  if (strict_finite_checks()) check_finite(out, what);
  return out;
}

// Shared plumbing for unary elementwise ops: dydx is evaluated lazily in the
// backward closure from whatever payloads the caller captured.
template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const Tensor<T>& x, const char* name, Fwd fwd, Bwd make_gx) {
  const std::int64_t n = x.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  fwd(CMap<T>(x.data(), n), Map<T>(out.data(), n));
  Tape<T>* tp = x.tape();
  if (!tp) return finish(Tensor<T>::from(x.shape(), std::move(out)), name);
  Tensor<T> y = Tensor<T>::from(x.shape(), std::move(out));
  const int xn = x.node();
  auto bwd = [xn, n, make_gx](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T> gx(static_cast<std::size_t>(n));
    make_gx(CMap<T>(g.data(), n), Map<T>(gx.data(), n));
    t.accumulate(xn, gx);
  };
  const int node = tp->add_node(n, std::move(bwd));
  return finish(Tensor<T>::attached(y, tp, node), name);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops. Shapes must match, or one operand is a scalar.

enum class BinKind { Add, Sub, Mul, Div };

template <class T>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, BinKind kind) {
  using detail::CMap;
  using detail::Map;
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  GA_CHECK(a_scalar || b_scalar || a.shape() == b.shape(), ShapeError,
           "binary op shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const Shape& out_shape = a_scalar ? b.shape() : a.shape();
  const std::int64_t n = a_scalar ? b.numel() : a.numel();

  std::vector<T> out(static_cast<std::size_t>(n));
  {
    Map<T> o(out.data(), n);
    if (a_scalar) {
      const T av = a.item();
      CMap<T> bv(b.data(), n);
      switch (kind) {
        case BinKind::Add: o = av + bv; break;
        case BinKind::Sub: o = av - bv; break;
        case BinKind::Mul: o = av * bv; break;
        case BinKind::Div: o = av / bv; break;
      }
    } else if (b_scalar) {
      CMap<T> av(a.data(), n);
      const T bv = b.item();
      switch (kind) {
        case BinKind::Add: o = av + bv; break;
        case BinKind::Sub: o = av - bv; break;
        case BinKind::Mul: o = av * bv; break;
        case BinKind::Div: o = av / bv; break;
      }
    } else {
      CMap<T> av(a.data(), n);
      CMap<T> bv(b.data(), n);
      switch (kind) {
        case BinKind::Add: o = av + bv; break;
        case BinKind::Sub: o = av - bv; break;
        case BinKind::Mul: o = av * bv; break;
        case BinKind::Div: o = av / bv; break;
      }
    }
  }
  if (kind == BinKind::Div) {
    Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> m(out.data(), n);
    GA_CHECK(m.allFinite(), NumericError, "division produced non-finite values");
  }

  Tape<T>* tp = detail::pick_tape(a, b);
  if (!tp) return detail::finish(Tensor<T>::from(out_shape, std::move(out)), "binary op");

  Tensor<T> y = Tensor<T>::from(out_shape, std::move(out));
  const int an = a.requires_grad() ? a.node() : -1;
  const int bn = b.requires_grad() ? b.node() : -1;
  auto ad = a.payload();
  auto bd = b.payload();
  auto bwd = [an, bn, ad, bd, n, a_scalar, b_scalar, kind](Tape<T>& t, const std::vector<T>& g) {
    CMap<T> gv(g.data(), n);
    auto reduce_or_pass = [&](const Eigen::Array<T, Eigen::Dynamic, 1>& grad, bool scalar_side,
                              int node) {
      if (scalar_side) {
        const T s = grad.sum();
        t.accumulate(node, &s, 1);
      } else {
        t.accumulate(node, grad.data(), n);
      }
    };
    if (an >= 0) {
      Eigen::Array<T, Eigen::Dynamic, 1> gacc;
      switch (kind) {
        case BinKind::Add: gacc = gv; break;
        case BinKind::Sub: gacc = gv; break;
        case BinKind::Mul:
          if (b_scalar)
            gacc = gv * (*bd)[0];
          else
            gacc = gv * CMap<T>(bd->data(), n);
          break;
        case BinKind::Div:
          if (b_scalar)
            gacc = gv / (*bd)[0];
          else
            gacc = gv / CMap<T>(bd->data(), n);
          break;
      }
      reduce_or_pass(gacc, a_scalar, an);
    }
    if (bn >= 0) {
      Eigen::Array<T, Eigen::Dynamic, 1> gacc;
      switch (kind) {
        case BinKind::Add: gacc = gv; break;
        case BinKind::Sub: gacc = -gv; break;
        case BinKind::Mul:
          if (a_scalar)
            gacc = gv * (*ad)[0];
          else
            gacc = gv * CMap<T>(ad->data(), n);
          break;
        case BinKind::Div: {
          Eigen::Array<T, Eigen::Dynamic, 1> bb =
              b_scalar ? Eigen::Array<T, Eigen::Dynamic, 1>::Constant(n, (*bd)[0])
                       : Eigen::Array<T, Eigen::Dynamic, 1>(CMap<T>(bd->data(), n));
          Eigen::Array<T, Eigen::Dynamic, 1> aa =
              a_scalar ? Eigen::Array<T, Eigen::Dynamic, 1>::Constant(n, (*ad)[0])
                       : Eigen::Array<T, Eigen::Dynamic, 1>(CMap<T>(ad->data(), n));
          gacc = -gv * aa / (bb * bb);
          break;
        }
      }
      reduce_or_pass(gacc, b_scalar, bn);
    }
  };
  const int node = tp->add_node(n, std::move(bwd));
  return detail::finish(Tensor<T>::attached(y, tp, node), "binary op");
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, BinKind::Add);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, BinKind::Sub);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, BinKind::Mul);
}
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, BinKind::Div);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, T s) {
  return add(a, Tensor<T>::scalar(s));
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, T s) {
  return sub(a, Tensor<T>::scalar(s));
}
template <class T>
Tensor<T> sub(T s, const Tensor<T>& a) {
  return sub(Tensor<T>::scalar(s), a);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, T s) {
  return mul(a, Tensor<T>::scalar(s));
}
template <class T>
Tensor<T> div(const Tensor<T>& a, T s) {
  return div(a, Tensor<T>::scalar(s));
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return detail::unary_op(
      x, "neg", [](auto xv, auto o) { o = -xv; },
      [](auto g, auto gx) { gx = -g; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  const std::int64_t n = x.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  detail::Map<T>(out.data(), n) = detail::CMap<T>(x.data(), n).exp();
  Tensor<T> y = Tensor<T>::from(x.shape(), std::move(out));
  check_finite(y, "exp");
  Tape<T>* tp = x.tape();
  if (!tp) return y;
  auto yd = y.payload();
  const int xn = x.node();
  const int node = tp->add_node(n, [yd, xn, n](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T> gx(static_cast<std::size_t>(n));
    detail::Map<T>(gx.data(), n) = detail::CMap<T>(g.data(), n) * detail::CMap<T>(yd->data(), n);
    t.accumulate(xn, gx);
  });
  return Tensor<T>::attached(y, tp, node);
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  {
    detail::CMap<T> xv(x.data(), x.numel());
    GA_CHECK((xv > T(0)).all(), NumericError, "log() requires strictly positive input");
  }
  auto xd = x.payload();
  return detail::unary_op(
      x, "log", [](auto xv, auto o) { o = xv.log(); },
      [xd](auto g, auto gx) {
        gx = g / detail::CMap<T>(xd->data(), static_cast<std::int64_t>(xd->size()));
      });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
  {
    detail::CMap<T> xv(x.data(), x.numel());
    GA_CHECK((xv >= T(0)).all(), NumericError, "sqrt() requires non-negative input");
  }
  const std::int64_t n = x.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  detail::Map<T>(out.data(), n) = detail::CMap<T>(x.data(), n).sqrt();
  Tensor<T> y = Tensor<T>::from(x.shape(), std::move(out));
  Tape<T>* tp = x.tape();
  if (!tp) return y;
  auto yd = y.payload();
  const int xn = x.node();
  const int node = tp->add_node(n, [yd, xn, n](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T> gx(static_cast<std::size_t>(n));
    detail::Map<T>(gx.data(), n) =
        detail::CMap<T>(g.data(), n) / (T(2) * detail::CMap<T>(yd->data(), n));
    t.accumulate(xn, gx);
  });
  return detail::finish(Tensor<T>::attached(y, tp, node), "sqrt");
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  auto xd = x.payload();
  return detail::unary_op(
      x, "square", [](auto xv, auto o) { o = xv.square(); },
      [xd](auto g, auto gx) {
        gx = g * T(2) * detail::CMap<T>(xd->data(), static_cast<std::int64_t>(xd->size()));
      });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  auto xd = x.payload();
  return detail::unary_op(
      x, "abs", [](auto xv, auto o) { o = xv.abs(); },
      [xd](auto g, auto gx) {
        detail::CMap<T> xv(xd->data(), static_cast<std::int64_t>(xd->size()));
        gx = g * xv.sign();
      });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  const std::int64_t n = x.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const T v = x.data()[i];
    out[static_cast<std::size_t>(i)] =
        v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  Tensor<T> y = Tensor<T>::from(x.shape(), std::move(out));
  Tape<T>* tp = x.tape();
  if (!tp) return y;
  auto yd = y.payload();
  const int xn = x.node();
  const int node = tp->add_node(n, [yd, xn, n](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T> gx(static_cast<std::size_t>(n));
    detail::CMap<T> yv(yd->data(), n);
    detail::Map<T>(gx.data(), n) = detail::CMap<T>(g.data(), n) * yv * (T(1) - yv);
    t.accumulate(xn, gx);
  });
  return Tensor<T>::attached(y, tp, node);
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  auto xd = x.payload();
  return detail::unary_op(
      x, "softplus",
      [](auto xv, auto o) {
        for (std::int64_t i = 0; i < xv.size(); ++i) {
          const T v = xv[i];
          o[i] = v > T(20) ? v : (v < T(-20) ? std::exp(v) : std::log1p(std::exp(v)));
        }
      },
      [xd](auto g, auto gx) {
        const std::int64_t n = static_cast<std::int64_t>(xd->size());
        detail::CMap<T> xv(xd->data(), n);
        for (std::int64_t i = 0; i < n; ++i) {
          const T v = xv[i];
          const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
          gx[i] = g[i] * s;
        }
      });
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  auto xd = x.payload();
  return detail::unary_op(
      x, "silu",
      [](auto xv, auto o) {
        for (std::int64_t i = 0; i < xv.size(); ++i) {
          const T v = xv[i];
          const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
          o[i] = v * s;
        }
      },
      [xd](auto g, auto gx) {
        const std::int64_t n = static_cast<std::int64_t>(xd->size());
        detail::CMap<T> xv(xd->data(), n);
        for (std::int64_t i = 0; i < n; ++i) {
          const T v = xv[i];
          const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
          gx[i] = g[i] * (s + v * s * (T(1) - s));
        }
      });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  auto xd = x.payload();
  return detail::unary_op(
      x, "relu", [](auto xv, auto o) { o = xv.max(T(0)); },
      [xd](auto g, auto gx) {
        detail::CMap<T> xv(xd->data(), static_cast<std::int64_t>(xd->size()));
        gx = (xv > T(0)).select(g, T(0));
      });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  const std::int64_t n = x.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  detail::Map<T>(out.data(), n) = detail::CMap<T>(x.data(), n).tanh();
  Tensor<T> y = Tensor<T>::from(x.shape(), std::move(out));
  Tape<T>* tp = x.tape();
  if (!tp) return y;
  auto yd = y.payload();
  const int xn = x.node();
  const int node = tp->add_node(n, [yd, xn, n](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T> gx(static_cast<std::size_t>(n));
    detail::CMap<T> yv(yd->data(), n);
    detail::Map<T>(gx.data(), n) = detail::CMap<T>(g.data(), n) * (T(1) - yv.square());
    t.accumulate(xn, gx);
  });
  return Tensor<T>::attached(y, tp, node);
}

// Subgradient convention: grad passes only strictly inside (lo, hi).
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  auto xd = x.payload();
  return detail::unary_op(
      x, "clamp", [lo, hi](auto xv, auto o) { o = xv.max(lo).min(hi); },
      [xd, lo, hi](auto g, auto gx) {
        detail::CMap<T> xv(xd->data(), static_cast<std::int64_t>(xd->size()));
        gx = (xv > lo && xv < hi).select(g, T(0));
      });
}

template <class T>
Tensor<T> cwise_max(const Tensor<T>& x, T c) {
  auto xd = x.payload();
  return detail::unary_op(
      x, "cwise_max", [c](auto xv, auto o) { o = xv.max(c); },
      [xd, c](auto g, auto gx) {
        detail::CMap<T> xv(xd->data(), static_cast<std::int64_t>(xd->size()));
        gx = (xv > c).select(g, T(0));
      });
}

template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return x.detached();
}

// ---------------------------------------------------------------------------
// Reductions.

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  const std::int64_t n = x.numel();
  const T s = detail::CMap<T>(x.data(), n).sum();
  Tape<T>* tp = x.tape();
  if (!tp) return Tensor<T>::scalar(s);
  const int xn = x.node();
  const int node = tp->add_node(1, [xn, n](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T> gx(static_cast<std::size_t>(n), g[0]);
    t.accumulate(xn, gx);
  });
  return Tensor<T>::attached(Tensor<T>::scalar(s), tp, node);
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  GA_CHECK(x.numel() > 0, ShapeError, "mean() of empty tensor");
  return div(sum(x), static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Linear algebra.

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  GA_CHECK(a.rank() == 2 && b.rank() == 2, ShapeError, "matmul() expects rank-2 tensors");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  GA_CHECK(b.dim(0) == k, ShapeError, "matmul() inner dimension mismatch");
  std::vector<T> out(static_cast<std::size_t>(m * n));
  detail::Mat<T>(out.data(), m, n).noalias() =
      detail::CMat<T>(a.data(), m, k) * detail::CMat<T>(b.data(), k, n);
  Tensor<T> y = Tensor<T>::from({m, n}, std::move(out));
  Tape<T>* tp = detail::pick_tape(a, b);
  if (!tp) return detail::finish(std::move(y), "matmul");
  const int an = a.requires_grad() ? a.node() : -1;
  const int bn = b.requires_grad() ? b.node() : -1;
  auto ad = a.payload();
  auto bd = b.payload();
  const int node = tp->add_node(m * n, [an, bn, ad, bd, m, k, n](Tape<T>& t,
                                                                 const std::vector<T>& g) {
    detail::CMat<T> gm(g.data(), m, n);
    if (an >= 0) {
      std::vector<T> ga(static_cast<std::size_t>(m * k));
      detail::Mat<T>(ga.data(), m, k).noalias() = gm * detail::CMat<T>(bd->data(), k, n).transpose();
      t.accumulate(an, ga);
    }
    if (bn >= 0) {
      std::vector<T> gb(static_cast<std::size_t>(k * n));
      detail::Mat<T>(gb.data(), k, n).noalias() = detail::CMat<T>(ad->data(), m, k).transpose() * gm;
      t.accumulate(bn, gb);
    }
  });
  return detail::finish(Tensor<T>::attached(y, tp, node), "matmul");
}

// y[i, :] = x[i, :] + b
template <class T>
Tensor<T> add_rows(const Tensor<T>& x, const Tensor<T>& b) {
  GA_CHECK(x.rank() == 2 && b.rank() == 1 && x.dim(1) == b.dim(0), ShapeError,
           "add_rows() expects [m,n] and [n]");
  const std::int64_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  detail::Mat<T>(out.data(), m, n) =
      detail::CMat<T>(x.data(), m, n).rowwise() +
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data(), n);
  Tensor<T> y = Tensor<T>::from({m, n}, std::move(out));
  Tape<T>* tp = detail::pick_tape(x, b);
  if (!tp) return y;
  const int xn = x.requires_grad() ? x.node() : -1;
  const int bnode = b.requires_grad() ? b.node() : -1;
  const int node = tp->add_node(m * n, [xn, bnode, m, n](Tape<T>& t, const std::vector<T>& g) {
    if (xn >= 0) t.accumulate(xn, g);
    if (bnode >= 0) {
      std::vector<T> gb(static_cast<std::size_t>(n));
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data(), n) =
          detail::CMat<T>(g.data(), m, n).colwise().sum();
      t.accumulate(bnode, gb);
    }
  });
  return Tensor<T>::attached(y, tp, node);
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_rows(matmul(x, w), b);
}

// y[i, :] = x[i, :] * s[i]
template <class T>
Tensor<T> mul_rows(const Tensor<T>& x, const Tensor<T>& s) {
  GA_CHECK(x.rank() == 2 && s.rank() == 1 && x.dim(0) == s.dim(0), ShapeError,
           "mul_rows() expects [m,n] and [m]");
  const std::int64_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  for (std::int64_t i = 0; i < m; ++i)
    detail::Map<T>(out.data() + i * n, n) = detail::CMap<T>(x.data() + i * n, n) * s.data()[i];
  Tensor<T> y = Tensor<T>::from({m, n}, std::move(out));
  Tape<T>* tp = detail::pick_tape(x, s);
  if (!tp) return y;
  const int xn = x.requires_grad() ? x.node() : -1;
  const int sn = s.requires_grad() ? s.node() : -1;
  auto xd = x.payload();
  auto sd = s.payload();
  const int node = tp->add_node(m * n, [xn, sn, xd, sd, m, n](Tape<T>& t, const std::vector<T>& g) {
    if (xn >= 0) {
      std::vector<T> gx(static_cast<std::size_t>(m * n));
      for (std::int64_t i = 0; i < m; ++i)
        detail::Map<T>(gx.data() + i * n, n) =
            detail::CMap<T>(g.data() + i * n, n) * (*sd)[static_cast<std::size_t>(i)];
      t.accumulate(xn, gx);
    }
    if (sn >= 0) {
      std::vector<T> gs(static_cast<std::size_t>(m));
      for (std::int64_t i = 0; i < m; ++i)
        gs[static_cast<std::size_t>(i)] = (detail::CMap<T>(g.data() + i * n, n) *
                                           detail::CMap<T>(xd->data() + i * n, n))
                                              .sum();
      t.accumulate(sn, gs);
    }
  });
  return Tensor<T>::attached(y, tp, node);
}

// y[c, :, :] = x[c, :, :] + b[c], for CHW feature maps.
template <class T>
Tensor<T> add_channels(const Tensor<T>& x, const Tensor<T>& b) {
  GA_CHECK(x.rank() == 3 && b.rank() == 1 && x.dim(0) == b.dim(0), ShapeError,
           "add_channels() expects [c,h,w] and [c]");
  const std::int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<T> out(x.vals());
  for (std::int64_t ci = 0; ci < c; ++ci) {
    detail::Map<T>(out.data() + ci * hw, hw) += b.data()[ci];
  }
  Tensor<T> y = Tensor<T>::from(x.shape(), std::move(out));
  Tape<T>* tp = detail::pick_tape(x, b);
  if (!tp) return y;
  const int xn = x.requires_grad() ? x.node() : -1;
  const int bnode = b.requires_grad() ? b.node() : -1;
  const int node = tp->add_node(c * hw, [xn, bnode, c, hw](Tape<T>& t, const std::vector<T>& g) {
    if (xn >= 0) t.accumulate(xn, g);
    if (bnode >= 0) {
      std::vector<T> gb(static_cast<std::size_t>(c));
      for (std::int64_t ci = 0; ci < c; ++ci)
        gb[static_cast<std::size_t>(ci)] = detail::CMap<T>(g.data() + ci * hw, hw).sum();
      t.accumulate(bnode, gb);
    }
  });
  return Tensor<T>::attached(y, tp, node);
}

// ---------------------------------------------------------------------------
// Shape ops.

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  GA_CHECK(shape_numel(shape) == x.numel(), ShapeError, "reshape() numel mismatch");
  Tape<T>* tp = x.tape();
  if (!tp) return x.viewed(std::move(shape));
  const int xn = x.node();
  const std::int64_t n = x.numel();
  const int node = tp->add_node(
      n, [xn](Tape<T>& t, const std::vector<T>& g) { t.accumulate(xn, g); });
  Tensor<T> y = Tensor<T>::from(std::move(shape), x.vals());
  return Tensor<T>::attached(y, tp, node);
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  GA_CHECK(static_cast<int>(perm.size()) == r, ShapeError, "permute() rank mismatch");
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i + 1)] * x.dim(i + 1);
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = x.dim(perm[static_cast<std::size_t>(i)]);

  const std::int64_t n = x.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  std::vector<std::int64_t> coord(static_cast<std::size_t>(r), 0);
  for (std::int64_t o = 0; o < n; ++o) {
    std::int64_t rem = o, in_idx = 0;
    for (int i = 0; i < r; ++i) {
      const std::int64_t extent = out_shape[static_cast<std::size_t>(i)];
      std::int64_t block = 1;
      for (int j = i + 1; j < r; ++j) block *= out_shape[static_cast<std::size_t>(j)];
      const std::int64_t c = rem / block;
      rem -= c * block;
      (void)extent;
      in_idx += c * in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    out[static_cast<std::size_t>(o)] = x.data()[in_idx];
  }
  Tensor<T> y = Tensor<T>::from(out_shape, std::move(out));
  Tape<T>* tp = x.tape();
  if (!tp) return y;
  std::vector<int> inv(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
  const int xn = x.node();
  const Shape xshape = x.shape();
  const int node =
      tp->add_node(n, [xn, inv, out_shape, xshape](Tape<T>& t, const std::vector<T>& g) {
        Tensor<T> gt = Tensor<T>::from(out_shape, g);
        Tensor<T> gx = permute(gt, inv);
        t.accumulate(xn, gx.vals());
      });
  return Tensor<T>::attached(y, tp, node);
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  GA_CHECK(!parts.empty(), ShapeError, "concat() of nothing");
  const int r = parts[0].rank();
  GA_CHECK(axis >= 0 && axis < r, ShapeError, "concat() axis out of range");
  Shape out_shape = parts[0].shape();
  std::int64_t axis_total = 0;
  for (const auto& p : parts) {
    GA_CHECK(p.rank() == r, ShapeError, "concat() rank mismatch");
    for (int i = 0; i < r; ++i)
      GA_CHECK(i == axis || p.dim(i) == out_shape[static_cast<std::size_t>(i)], ShapeError,
               "concat() off-axis extent mismatch");
    axis_total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = axis_total;

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<std::size_t>(i)];

  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::int64_t axis_off = 0;
  for (const auto& p : parts) {
    const std::int64_t pa = p.dim(axis);
    for (std::int64_t ob = 0; ob < outer; ++ob) {
      std::memcpy(out.data() + (ob * axis_total + axis_off) * inner,
                  p.data() + ob * pa * inner, static_cast<std::size_t>(pa * inner) * sizeof(T));
    }
    axis_off += pa;
  }
  Tensor<T> y = Tensor<T>::from(out_shape, std::move(out));

  Tape<T>* tp = nullptr;
  for (const auto& p : parts)
    if (p.tape()) {
      GA_CHECK(!tp || tp == p.tape(), ValueError, "concat() inputs on different tapes");
      tp = p.tape();
    }
  if (!tp) return y;
  struct Piece {
    int node;
    std::int64_t extent;
  };
  std::vector<Piece> pieces;
  pieces.reserve(parts.size());
  for (const auto& p : parts) pieces.push_back({p.requires_grad() ? p.node() : -1, p.dim(axis)});
  const int node = tp->add_node(
      y.numel(), [pieces, outer, inner, axis_total](Tape<T>& t, const std::vector<T>& g) {
        std::int64_t axis_off = 0;
        for (const auto& pc : pieces) {
          if (pc.node >= 0) {
            std::vector<T> gp(static_cast<std::size_t>(outer * pc.extent * inner));
            for (std::int64_t ob = 0; ob < outer; ++ob) {
              std::memcpy(gp.data() + ob * pc.extent * inner,
                          g.data() + (ob * axis_total + axis_off) * inner,
                          static_cast<std::size_t>(pc.extent * inner) * sizeof(T));
            }
            t.accumulate(pc.node, gp);
          }
          axis_off += pc.extent;
        }
      });
  return Tensor<T>::attached(y, tp, node);
}

// Gathers rows (first-axis slices). Indices may repeat; backward scatter-adds.
template <class T>
Tensor<T> index_select(const Tensor<T>& x, const std::vector<std::int64_t>& idx) {
  GA_CHECK(x.rank() >= 1, ShapeError, "index_select() needs rank >= 1");
  const std::int64_t rows = x.dim(0);
  const std::int64_t rowlen = x.numel() / rows;
  for (auto i : idx) GA_CHECK(i >= 0 && i < rows, ValueError, "index_select() index out of range");
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<std::int64_t>(idx.size());
  std::vector<T> out(idx.size() * static_cast<std::size_t>(rowlen));
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::memcpy(out.data() + static_cast<std::int64_t>(k) * rowlen, x.data() + idx[k] * rowlen,
                static_cast<std::size_t>(rowlen) * sizeof(T));
  Tensor<T> y = Tensor<T>::from(out_shape, std::move(out));
  Tape<T>* tp = x.tape();
  if (!tp) return y;
  const int xn = x.node();
  const std::int64_t xnumel = x.numel();
  const int node = tp->add_node(
      y.numel(), [xn, idx, rowlen, xnumel](Tape<T>& t, const std::vector<T>& g) {
        std::vector<T> gx(static_cast<std::size_t>(xnumel), T(0));
        for (std::size_t k = 0; k < idx.size(); ++k) {
          detail::Map<T>(gx.data() + idx[k] * rowlen, rowlen) +=
              detail::CMap<T>(g.data() + static_cast<std::int64_t>(k) * rowlen, rowlen);
        }
        t.accumulate(xn, gx);
      });
  return Tensor<T>::attached(y, tp, node);
}

template <class T>
Tensor<T> row_range(const Tensor<T>& x, std::int64_t begin, std::int64_t end) {
  GA_CHECK(x.rank() >= 1 && begin >= 0 && begin < end && end <= x.dim(0), ShapeError,
           "row_range() bounds invalid");
  const std::int64_t rowlen = x.numel() / x.dim(0);
  Shape out_shape = x.shape();
  out_shape[0] = end - begin;
  std::vector<T> out(static_cast<std::size_t>((end - begin) * rowlen));
  std::memcpy(out.data(), x.data() + begin * rowlen, out.size() * sizeof(T));
  Tensor<T> y = Tensor<T>::from(out_shape, std::move(out));
  Tape<T>* tp = x.tape();
  if (!tp) return y;
  const int xn = x.node();
  const std::int64_t xnumel = x.numel();
  const int node =
      tp->add_node(y.numel(), [xn, begin, rowlen, xnumel](Tape<T>& t, const std::vector<T>& g) {
        std::vector<T> gx(static_cast<std::size_t>(xnumel), T(0));
        std::memcpy(gx.data() + begin * rowlen, g.data(), g.size() * sizeof(T));
        t.accumulate(xn, gx);
      });
  return Tensor<T>::attached(y, tp, node);
}

// ---------------------------------------------------------------------------
// Segmented ops over ragged per-ray sample lists. `offsets` has S+1 entries
// delimiting rows of x belonging to each segment.

inline void check_offsets(const std::vector<std::int64_t>& offsets, std::int64_t rows) {
  GA_CHECK(offsets.size() >= 1 && offsets.front() == 0 && offsets.back() == rows, ShapeError,
           "segment offsets must start at 0 and end at row count");
  for (std::size_t i = 1; i < offsets.size(); ++i)
    GA_CHECK(offsets[i] >= offsets[i - 1], ShapeError, "segment offsets must be non-decreasing");
}

template <class T>
Tensor<T> segment_sum(const Tensor<T>& x, const std::vector<std::int64_t>& offsets) {
  GA_CHECK(x.rank() >= 1, ShapeError, "segment_sum() needs rank >= 1");
  const std::int64_t rows = x.dim(0);
  check_offsets(offsets, rows);
  const std::int64_t S = static_cast<std::int64_t>(offsets.size()) - 1;
  const std::int64_t rowlen = rows == 0 ? 0 : x.numel() / rows;
  Shape out_shape = x.shape();
  out_shape[0] = S;
  std::vector<T> out(static_cast<std::size_t>(S * rowlen), T(0));
  for (std::int64_t s = 0; s < S; ++s) {
    detail::Map<T> acc(out.data() + s * rowlen, rowlen);
    for (std::int64_t r = offsets[static_cast<std::size_t>(s)];
         r < offsets[static_cast<std::size_t>(s + 1)]; ++r)
      acc += detail::CMap<T>(x.data() + r * rowlen, rowlen);
  }
  Tensor<T> y = Tensor<T>::from(out_shape, std::move(out));
  Tape<T>* tp = x.tape();
  if (!tp) return y;
  const int xn = x.node();
  const std::int64_t xnumel = x.numel();
  const int node =
      tp->add_node(y.numel(), [xn, offsets, rowlen, xnumel, S](Tape<T>& t, const std::vector<T>& g) {
        std::vector<T> gx(static_cast<std::size_t>(xnumel));
        for (std::int64_t s = 0; s < S; ++s) {
          for (std::int64_t r = offsets[static_cast<std::size_t>(s)];
               r < offsets[static_cast<std::size_t>(s + 1)]; ++r)
            std::memcpy(gx.data() + r * rowlen, g.data() + s * rowlen,
                        static_cast<std::size_t>(rowlen) * sizeof(T));
        }
        t.accumulate(xn, gx);
      });
  return Tensor<T>::attached(y, tp, node);
}

// Volume-rendering weights w_t = a_t * prod_{j<t} (1 - a_j), per segment.
// Backward is exact and division-free: with prefix transmittance T_t and
// suffix accumulator R_t = sum_{u>t} g_u a_u prod_{t<j<u}(1-a_j),
// dL/da_t = T_t (g_t - R_t).
template <class T>
Tensor<T> alpha_composite(const Tensor<T>& alpha, const std::vector<std::int64_t>& offsets) {
  GA_CHECK(alpha.rank() == 1, ShapeError, "alpha_composite() expects a rank-1 alpha tensor");
  const std::int64_t n = alpha.numel();
  check_offsets(offsets, n);
  const std::int64_t S = static_cast<std::int64_t>(offsets.size()) - 1;
  std::vector<T> w(static_cast<std::size_t>(n));
  auto trans = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  const T* a = alpha.data();
  for (std::int64_t s = 0; s < S; ++s) {
    T tr = T(1);
    for (std::int64_t r = offsets[static_cast<std::size_t>(s)];
         r < offsets[static_cast<std::size_t>(s + 1)]; ++r) {
      (*trans)[static_cast<std::size_t>(r)] = tr;
      w[static_cast<std::size_t>(r)] = a[r] * tr;
      tr *= (T(1) - a[r]);
    }
  }
  Tensor<T> y = Tensor<T>::from(alpha.shape(), std::move(w));
  Tape<T>* tp = alpha.tape();
  if (!tp) return y;
  const int an = alpha.node();
  auto ad = alpha.payload();
  const int node =
      tp->add_node(n, [an, ad, trans, offsets, S](Tape<T>& t, const std::vector<T>& g) {
        std::vector<T> gx(ad->size());
        const T* a = ad->data();
        for (std::int64_t s = 0; s < S; ++s) {
          T r_acc = T(0);
          for (std::int64_t r = offsets[static_cast<std::size_t>(s + 1)] - 1;
               r >= offsets[static_cast<std::size_t>(s)]; --r) {
            gx[static_cast<std::size_t>(r)] =
                (*trans)[static_cast<std::size_t>(r)] * (g[static_cast<std::size_t>(r)] - r_acc);
            r_acc = g[static_cast<std::size_t>(r)] * a[r] + (T(1) - a[r]) * r_acc;
          }
        }
        t.accumulate(an, gx);
      });
  return Tensor<T>::attached(y, tp, node);
}

// ---------------------------------------------------------------------------
// Bilinear grid sampling, align-corners over [-1,1]^2, clamped outside.
// grid is [H, W, C]; uv is [n, 2] ordered (u, v) with u along W.
// Differentiable in both grid values and coordinates.

template <class T>
Tensor<T> bilinear_sample(const Tensor<T>& grid, const Tensor<T>& uv) {
  GA_CHECK(grid.rank() == 3, ShapeError, "bilinear_sample() grid must be [H,W,C]");
  GA_CHECK(uv.rank() == 2 && uv.dim(1) == 2, ShapeError, "bilinear_sample() uv must be [n,2]");
  const std::int64_t H = grid.dim(0), W = grid.dim(1), C = grid.dim(2), n = uv.dim(0);
  GA_CHECK(H >= 1 && W >= 1, ShapeError, "bilinear_sample() empty grid");

  std::vector<T> out(static_cast<std::size_t>(n * C));
  const T* gdat = grid.data();
  const T* uvp = uv.data();
  auto corner = [&](std::int64_t r, std::int64_t c) { return gdat + (r * W + c) * C; };
  for (std::int64_t i = 0; i < n; ++i) {
    T u = uvp[i * 2 + 0], v = uvp[i * 2 + 1];
    u = std::min(T(1), std::max(T(-1), u));
    v = std::min(T(1), std::max(T(-1), v));
    const T cf = (u + T(1)) * T(0.5) * static_cast<T>(W - 1);
    const T rf = (v + T(1)) * T(0.5) * static_cast<T>(H - 1);
    const std::int64_t c0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(cf)), W - 1);
    const std::int64_t r0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(rf)), H - 1);
    const std::int64_t c1 = std::min<std::int64_t>(c0 + 1, W - 1);
    const std::int64_t r1 = std::min<std::int64_t>(r0 + 1, H - 1);
    const T fu = cf - static_cast<T>(c0);
    const T fv = rf - static_cast<T>(r0);
    detail::Map<T> o(out.data() + i * C, C);
    o = detail::CMap<T>(corner(r0, c0), C) * (T(1) - fu) * (T(1) - fv) +
        detail::CMap<T>(corner(r0, c1), C) * fu * (T(1) - fv) +
        detail::CMap<T>(corner(r1, c0), C) * (T(1) - fu) * fv +
        detail::CMap<T>(corner(r1, c1), C) * fu * fv;
  }
  Tensor<T> y = Tensor<T>::from({n, C}, std::move(out));
  Tape<T>* tp = detail::pick_tape(grid, uv);
  if (!tp) return y;
  const int gn = grid.requires_grad() ? grid.node() : -1;
  const int un = uv.requires_grad() ? uv.node() : -1;
  auto gd = grid.payload();
  auto ud = uv.payload();
  const int node = tp->add_node(n * C, [gn, un, gd, ud, H, W, C, n](Tape<T>& t,
                                                                    const std::vector<T>& g) {
    std::vector<T> ggrid;
    std::vector<T> guv;
    if (gn >= 0) ggrid.assign(static_cast<std::size_t>(H * W * C), T(0));
    if (un >= 0) guv.assign(static_cast<std::size_t>(n * 2), T(0));
    const T* gdat = gd->data();
    const T* uvp = ud->data();
    for (std::int64_t i = 0; i < n; ++i) {
      const T u_raw = uvp[i * 2 + 0], v_raw = uvp[i * 2 + 1];
      const bool u_in = u_raw > T(-1) && u_raw < T(1);
      const bool v_in = v_raw > T(-1) && v_raw < T(1);
      const T u = std::min(T(1), std::max(T(-1), u_raw));
      const T v = std::min(T(1), std::max(T(-1), v_raw));
      const T cf = (u + T(1)) * T(0.5) * static_cast<T>(W - 1);
      const T rf = (v + T(1)) * T(0.5) * static_cast<T>(H - 1);
      const std::int64_t c0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(cf)), W - 1);
      const std::int64_t r0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(rf)), H - 1);
      const std::int64_t c1 = std::min<std::int64_t>(c0 + 1, W - 1);
      const std::int64_t r1 = std::min<std::int64_t>(r0 + 1, H - 1);
      const T fu = cf - static_cast<T>(c0);
      const T fv = rf - static_cast<T>(r0);
      detail::CMap<T> go(g.data() + i * C, C);
      if (gn >= 0) {
        detail::Map<T>(ggrid.data() + (r0 * W + c0) * C, C) += go * (T(1) - fu) * (T(1) - fv);
        detail::Map<T>(ggrid.data() + (r0 * W + c1) * C, C) += go * fu * (T(1) - fv);
        detail::Map<T>(ggrid.data() + (r1 * W + c0) * C, C) += go * (T(1) - fu) * fv;
        detail::Map<T>(ggrid.data() + (r1 * W + c1) * C, C) += go * fu * fv;
      }
      if (un >= 0) {
        auto corner = [&](std::int64_t r, std::int64_t c) { return detail::CMap<T>(gdat + (r * W + c) * C, C); };
        const T dval_dfu =
            (go * ((corner(r0, c1) - corner(r0, c0)) * (T(1) - fv) +
                   (corner(r1, c1) - corner(r1, c0)) * fv)).sum();
        const T dval_dfv =
            (go * ((corner(r1, c0) - corner(r0, c0)) * (T(1) - fu) +
                   (corner(r1, c1) - corner(r0, c1)) * fu)).sum();
        if (u_in) guv[static_cast<std::size_t>(i * 2 + 0)] = dval_dfu * T(0.5) * static_cast<T>(W - 1);
        if (v_in) guv[static_cast<std::size_t>(i * 2 + 1)] = dval_dfv * T(0.5) * static_cast<T>(H - 1);
      }
    }
    if (gn >= 0) t.accumulate(gn, ggrid);
    if (un >= 0) t.accumulate(un, guv);
  });
  return Tensor<T>::attached(y, tp, node);
}

// ---------------------------------------------------------------------------
// Convolution (CHW, zero padding). Weight layout is [C_out, C_in*kh*kw] so
// the forward is a single GEMM against the im2col matrix; the im2col matrix
// is recomputed in backward rather than saved.

namespace detail {

template <class T>
void im2col(const T* x, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t kh,
            std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t ho,
            std::int64_t wo, T* cols) {
  for (std::int64_t c = 0; c < cin; ++c) {
    for (std::int64_t ki = 0; ki < kh; ++ki) {
      for (std::int64_t kj = 0; kj < kw; ++kj) {
        T* dst = cols + ((c * kh + ki) * kw + kj) * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= h) {
            std::fill(dst + oy * wo, dst + (oy + 1) * wo, T(0));
            continue;
          }
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t ix = ox * stride + kj - pad;
            dst[oy * wo + ox] = (ix < 0 || ix >= w) ? T(0) : x[(c * h + iy) * w + ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t kh,
            std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t ho,
            std::int64_t wo, T* x) {
  std::fill(x, x + cin * h * w, T(0));
  for (std::int64_t c = 0; c < cin; ++c) {
    for (std::int64_t ki = 0; ki < kh; ++ki) {
      for (std::int64_t kj = 0; kj < kw; ++kj) {
        const T* src = cols + ((c * kh + ki) * kw + kj) * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < w) x[(c * h + iy) * w + ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::int64_t kh,
                 std::int64_t kw, std::int64_t stride = 1, std::int64_t pad = -1) {
  GA_CHECK(x.rank() == 3, ShapeError, "conv2d() input must be [C,H,W]");
  GA_CHECK(w.rank() == 2, ShapeError, "conv2d() weight must be [C_out, C_in*kh*kw]");
  const std::int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::int64_t cout = w.dim(0);
  GA_CHECK(w.dim(1) == cin * kh * kw, ShapeError, "conv2d() weight inner extent mismatch");
  GA_CHECK(b.numel() == cout, ShapeError, "conv2d() bias extent mismatch");
  if (pad < 0) pad = kh / 2;
  const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t wo = (wd + 2 * pad - kw) / stride + 1;
  GA_CHECK(ho >= 1 && wo >= 1, ShapeError, "conv2d() output would be empty");

  const std::int64_t K = cin * kh * kw, P = ho * wo;
  std::vector<T> cols(static_cast<std::size_t>(K * P));
  detail::im2col(x.data(), cin, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
  std::vector<T> out(static_cast<std::size_t>(cout * P));
  detail::Mat<T> om(out.data(), cout, P);
  om.noalias() = detail::CMat<T>(w.data(), cout, K) * detail::CMat<T>(cols.data(), K, P);
  for (std::int64_t c = 0; c < cout; ++c) om.row(c).array() += b.data()[c];

  Tensor<T> y = Tensor<T>::from({cout, ho, wo}, std::move(out));
  Tape<T>* tp = detail::pick_tape(x, w, b);
  if (!tp) return detail::finish(std::move(y), "conv2d");
  const int xn = x.requires_grad() ? x.node() : -1;
  const int wn = w.requires_grad() ? w.node() : -1;
  const int bn = b.requires_grad() ? b.node() : -1;
  auto xd = x.payload();
  auto wd_ = w.payload();
  const int node = tp->add_node(
      cout * P, [=](Tape<T>& t, const std::vector<T>& g) {
        detail::CMat<T> gm(g.data(), cout, P);
        if (bn >= 0) {
          std::vector<T> gb(static_cast<std::size_t>(cout));
          for (std::int64_t c = 0; c < cout; ++c) gb[static_cast<std::size_t>(c)] = gm.row(c).sum();
          t.accumulate(bn, gb);
        }
        if (wn >= 0) {
          std::vector<T> cols(static_cast<std::size_t>(K * P));
          detail::im2col(xd->data(), cin, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
          std::vector<T> gw(static_cast<std::size_t>(cout * K));
          detail::Mat<T>(gw.data(), cout, K).noalias() =
              gm * detail::CMat<T>(cols.data(), K, P).transpose();
          t.accumulate(wn, gw);
        }
        if (xn >= 0) {
          std::vector<T> gcols(static_cast<std::size_t>(K * P));
          detail::Mat<T>(gcols.data(), K, P).noalias() =
              detail::CMat<T>(wd_->data(), cout, K).transpose() * gm;
          std::vector<T> gx(static_cast<std::size_t>(cin * h * wd));
          detail::col2im(gcols.data(), cin, h, wd, kh, kw, stride, pad, ho, wo, gx.data());
          t.accumulate(xn, gx);
        }
      });
  return detail::finish(Tensor<T>::attached(y, tp, node), "conv2d");
}

template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  GA_CHECK(x.rank() == 3, ShapeError, "upsample2x() input must be [C,H,W]");
  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<T> out(static_cast<std::size_t>(c * 4 * h * w));
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t y = 0; y < 2 * h; ++y)
      for (std::int64_t xx = 0; xx < 2 * w; ++xx)
        out[static_cast<std::size_t>((ci * 2 * h + y) * 2 * w + xx)] =
            x.data()[(ci * h + y / 2) * w + xx / 2];
  Tensor<T> y = Tensor<T>::from({c, 2 * h, 2 * w}, std::move(out));
  Tape<T>* tp = x.tape();
  if (!tp) return y;
  const int xn = x.node();
  const int node = tp->add_node(y.numel(), [xn, c, h, w](Tape<T>& t, const std::vector<T>& g) {
    std::vector<T> gx(static_cast<std::size_t>(c * h * w), T(0));
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t yy = 0; yy < 2 * h; ++yy)
        for (std::int64_t xx = 0; xx < 2 * w; ++xx)
          gx[static_cast<std::size_t>((ci * h + yy / 2) * w + xx / 2)] +=
              g[static_cast<std::size_t>((ci * 2 * h + yy) * 2 * w + xx)];
    t.accumulate(xn, gx);
  });
  return Tensor<T>::attached(y, tp, node);
}

// GroupNorm over CHW with per-channel affine.
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::int64_t groups, T eps = T(1e-5)) {
  GA_CHECK(x.rank() == 3, ShapeError, "group_norm() input must be [C,H,W]");
  const std::int64_t C = x.dim(0), hw = x.dim(1) * x.dim(2);
  GA_CHECK(groups >= 1 && C % groups == 0, ShapeError, "group_norm() groups must divide channels");
  GA_CHECK(gamma.numel() == C && beta.numel() == C, ShapeError, "group_norm() affine extent");
  const std::int64_t cpg = C / groups, gsz = cpg * hw;

  std::vector<T> out(static_cast<std::size_t>(C * hw));
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C * hw));
  auto inv_sd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(groups));
  for (std::int64_t g = 0; g < groups; ++g) {
    detail::CMap<T> xg(x.data() + g * gsz, gsz);
    const T mu = xg.mean();
    const T var = (xg - mu).square().sum() / static_cast<T>(gsz);
    const T isd = T(1) / std::sqrt(var + eps);
    (*inv_sd)[static_cast<std::size_t>(g)] = isd;
    detail::Map<T>(xhat->data() + g * gsz, gsz) = (xg - mu) * isd;
  }
  for (std::int64_t c = 0; c < C; ++c) {
    detail::Map<T>(out.data() + c * hw, hw) =
        detail::CMap<T>(xhat->data() + c * hw, hw) * gamma.data()[c] + beta.data()[c];
  }
  Tensor<T> y = Tensor<T>::from(x.shape(), std::move(out));
  Tape<T>* tp = detail::pick_tape(x, gamma, beta);
  if (!tp) return y;
  const int xn = x.requires_grad() ? x.node() : -1;
  const int gn = gamma.requires_grad() ? gamma.node() : -1;
  const int bn = beta.requires_grad() ? beta.node() : -1;
  auto gam = gamma.payload();
  const int node = tp->add_node(
      C * hw, [=](Tape<T>& t, const std::vector<T>& gout) {
        if (bn >= 0) {
          std::vector<T> gb(static_cast<std::size_t>(C));
          for (std::int64_t c = 0; c < C; ++c)
            gb[static_cast<std::size_t>(c)] = detail::CMap<T>(gout.data() + c * hw, hw).sum();
          t.accumulate(bn, gb);
        }
        if (gn >= 0) {
          std::vector<T> gg(static_cast<std::size_t>(C));
          for (std::int64_t c = 0; c < C; ++c)
            gg[static_cast<std::size_t>(c)] = (detail::CMap<T>(gout.data() + c * hw, hw) *
                                               detail::CMap<T>(xhat->data() + c * hw, hw))
                                                  .sum();
          t.accumulate(gn, gg);
        }
        if (xn >= 0) {
          std::vector<T> gx(static_cast<std::size_t>(C * hw));
          std::vector<T> dxhat(static_cast<std::size_t>(C * hw));
          for (std::int64_t c = 0; c < C; ++c)
            detail::Map<T>(dxhat.data() + c * hw, hw) =
                detail::CMap<T>(gout.data() + c * hw, hw) * (*gam)[static_cast<std::size_t>(c)];
          for (std::int64_t g = 0; g < groups; ++g) {
            detail::CMap<T> dxh(dxhat.data() + g * gsz, gsz);
            detail::CMap<T> xh(xhat->data() + g * gsz, gsz);
            const T m1 = dxh.mean();
            const T m2 = (dxh * xh).mean();
            detail::Map<T>(gx.data() + g * gsz, gsz) =
                (*inv_sd)[static_cast<std::size_t>(g)] * (dxh - m1 - xh * m2);
          }
          t.accumulate(xn, gx);
        }
      });
  return Tensor<T>::attached(y, tp, node);
}

}  // namespace ga
