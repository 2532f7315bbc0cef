// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <vector>

#include "genassets/common.hpp"
#include "genassets/rng.hpp"

namespace ga {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) {
    GA_CHECK(e >= 0, ShapeError, "tensor extents must be non-negative");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class T>
class Tape;

// Immutable dense row-major array. Copies are shallow (shared payload); all
// operations return fresh tensors. A tensor is either a plain value or
// attached to a tape node, in which case gradients flow to it on backward.
template <class T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  static Tensor from(Shape shape, std::vector<T> vals) {
    GA_CHECK(shape_numel(shape) == static_cast<std::int64_t>(vals.size()), ShapeError,
             "data length does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<T>>(std::move(vals));
    return t;
  }

  static Tensor zeros(Shape shape) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), T(0)));
  }

  static Tensor full(Shape shape, T v) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), v));
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
    const auto n = shape_numel(shape);
    std::vector<T> vals(static_cast<std::size_t>(n));
    for (auto& v : vals) v = static_cast<T>(rng.normal()) * stddev;
    return from(std::move(shape), std::move(vals));
  }

  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
    const auto n = shape_numel(shape);
    std::vector<T> vals(static_cast<std::size_t>(n));
    for (auto& v : vals) v = static_cast<T>(rng.uniform(lo, hi));
    return from(std::move(shape), std::move(vals));
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  std::int64_t dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_ ? data_->size() : 0); }

  const std::vector<T>& vals() const { return *data_; }
  const T* data() const { return data_->data(); }
  std::shared_ptr<const std::vector<T>> payload() const { return data_; }

  T item() const {
    GA_CHECK(numel() == 1, ShapeError, "item() requires a scalar tensor");
    return (*data_)[0];
  }

  bool requires_grad() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  int node() const { return node_; }

  bool all_finite() const {
    Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> m(data(), numel());
    return m.allFinite();
  }

  // Shape reinterpretation, shares the payload. Attached tensors go through
  // ops::reshape instead so the tape sees the op.
  Tensor viewed(Shape shape) const {
    GA_CHECK(shape_numel(shape) == numel(), ShapeError, "viewed(): numel mismatch");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    t.tape_ = tape_;
    t.node_ = node_;
    return t;
  }

  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
  }

  // Internal: used by ops and Tape to produce attached results.
  static Tensor attached(Shape shape, std::vector<T> vals, Tape<T>* tape, int node) {
    Tensor t = from(std::move(shape), std::move(vals));
    t.tape_ = tape;
    t.node_ = node;
    return t;
  }
  static Tensor attached(const Tensor& value, Tape<T>* tape, int node) {
    Tensor t = value;
    t.tape_ = tape;
    t.node_ = node;
    return t;
  }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  int node_ = -1;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// When enabled, every op validates that its output is finite. Training keeps
// it off for throughput and relies on per-step loss/gradient checks; tests
// flip it on.
inline bool& strict_finite_checks() {
  static bool on = false;
  return on;
}

template <class T>
inline void check_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

// Reverse-mode tape. Nodes are recorded in execution order, which is already
// a topological order, so backward is a single reverse sweep. Gradients
// accumulate additively at fan-out. The tape owns gradient buffers; saved
// inputs live inside the backward closures as shared payloads.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<T>&)>;

  // Registers a value as a differentiable leaf and returns the attached
  // handle to use in subsequent ops.
  Tensor<T> watch(const Tensor<T>& value) {
    GA_CHECK(!value.requires_grad() || value.tape() == this, ValueError,
             "tensor already attached to a different tape");
    const int node = add_node(value.numel(), nullptr);
    return Tensor<T>::attached(value, this, node);
  }

  int add_node(std::int64_t numel, BackwardFn fn) {
    nodes_.push_back(Node{std::move(fn), numel});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  void accumulate(int node, const T* g, std::int64_t n) {
    GA_CHECK(node >= 0 && node < static_cast<int>(nodes_.size()), ValueError, "bad tape node");
    GA_CHECK(nodes_[static_cast<std::size_t>(node)].numel == n, ShapeError,
             "gradient size mismatch on accumulate");
    auto& buf = grads_[static_cast<std::size_t>(node)];
    if (buf.empty()) {
      buf.assign(g, g + n);
    } else {
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> acc(buf.data(), n);
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> inc(g, n);
      acc += inc;
    }
  }

  void accumulate(int node, const std::vector<T>& g) {
    accumulate(node, g.data(), static_cast<std::int64_t>(g.size()));
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse. Nodes the
  // loss does not reach keep empty gradient buffers.
  void backward(const Tensor<T>& loss) {
    GA_CHECK(loss.numel() == 1, ShapeError, "backward() requires a scalar loss");
    GA_CHECK(loss.tape() == this, ValueError, "loss not attached to this tape");
    GA_CHECK(std::isfinite(static_cast<double>(loss.item())), NumericError,
             "non-finite loss at backward()");
    grads_[static_cast<std::size_t>(loss.node())] = {T(1)};
    for (int i = loss.node(); i >= 0; --i) {
      auto& node = nodes_[static_cast<std::size_t>(i)];
      auto& g = grads_[static_cast<std::size_t>(i)];
      if (g.empty() || !node.fn) continue;
      if (strict_finite_checks()) {
        Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> m(g.data(), g.size());
        if (!m.allFinite()) throw NumericError("non-finite gradient encountered during backward");
      }
      node.fn(*this, g);
      // Interior gradient buffers are dead past this point; drop them so
      // long tapes do not hold every intermediate alive.
      if (i != loss.node()) g = {};
    }
    ran_backward_ = true;
  }

  bool has_grad(const Tensor<T>& t) const {
    return t.tape() == this && !grads_[static_cast<std::size_t>(t.node())].empty();
  }

  Tensor<T> grad(const Tensor<T>& t) const {
    GA_CHECK(t.tape() == this, ValueError, "tensor not attached to this tape");
    const auto& buf = grads_[static_cast<std::size_t>(t.node())];
    if (buf.empty()) return Tensor<T>::zeros(t.shape());
    Tensor<T> g = Tensor<T>::from(t.shape(), buf);
    if (!g.all_finite()) throw NumericError("non-finite gradient");
    return g;
  }

  std::size_t size() const { return nodes_.size(); }
  bool ran_backward() const { return ran_backward_; }

 private:
  struct Node {
    BackwardFn fn;  // null for leaves
    std::int64_t numel;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  bool ran_backward_ = false;
};

// Gradient of `loss` w.r.t. every watched leaf, keyed by node id.
template <class T>
std::map<int, Tensor<T>> forward_backward(Tape<T>& tape, const Tensor<T>& loss,
                                          const std::vector<Tensor<T>>& params) {
  tape.backward(loss);
  std::map<int, Tensor<T>> out;
  for (const auto& p : params) out.emplace(p.node(), tape.grad(p));
  return out;
}

}  // namespace ga
