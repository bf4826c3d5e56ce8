// Copyright 2026 The volseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Small reverse-mode autodiff over Tensor<T>. A Var is a shared handle to a
// graph node; ops record a backward closure only when grad mode is on and at
// least one input requires a gradient.

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "volseg/kernels.hpp"
#include "volseg/tensor.hpp"

namespace volseg::ag {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape);
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  int dim(std::size_t i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_->requires_grad; }
  Tensor<T>& grad() { return node_->ensure_grad(); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  void zero_grad() {
    if (node_->grad.size()) node_->grad.fill(T(0));
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
Var<T> constant(Tensor<T> v) {
  return Var<T>(std::move(v), false);
}

namespace detail {
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any && grad_enabled()) {
    n->requires_grad = true;
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(fn);
  }
  return Var<T>(std::move(n));
}

template <class T>
Tensor<T>* grad_of(Node<T>& n, std::size_t i) {
  auto& p = *n.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}
}  // namespace detail

/// Reverse pass from a scalar (or seeded with ones for non-scalars).
template <class T>
void backward(const Var<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---------------------------------------------------------------------------
// Ops

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  auto y = kern::conv2d(x.value(), w.value(), b.value(), stride, pad);
  return detail::make_result<T>(std::move(y), {x, w, b}, [stride, pad](Node<T>& n) {
    kern::conv2d_backward(n.parents[0]->value, n.parents[1]->value, n.grad, stride, pad,
                          detail::grad_of(n, 0), detail::grad_of(n, 1), detail::grad_of(n, 2));
  });
}

template <class T, class F, class DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x.value()[i]);
  return detail::make_result<T>(std::move(y), {x}, [df](Node<T>& n) {
    auto* gx = detail::grad_of(n, 0);
    if (!gx) return;
    const auto& xv = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.size(); ++i) (*gx)[i] += n.grad[i] * df(xv[i], n.value[i]);
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> square(const Var<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// a * x + c
template <class T>
Var<T> affine(const Var<T>& x, T a, T c) {
  return unary(x, [a, c](T v) { return a * v + c; }, [a](T, T) { return a; });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  return detail::make_result<T>(std::move(y), {a, b}, [](Node<T>& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = detail::grad_of(n, k))
        for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  return detail::make_result<T>(std::move(y), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    if (auto* g = detail::grad_of(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i] * bv[i];
    if (auto* g = detail::grad_of(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i] * av[i];
  });
}

template <class T>
Var<T> detach(const Var<T>& x) {
  return constant(x.value());
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape s) {
  auto y = x.value().reshaped(std::move(s));
  return detail::make_result<T>(std::move(y), {x}, [](Node<T>& n) {
    if (auto* g = detail::grad_of(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
  });
}

/// Concatenates along axis 1. Works for [B,C,H,W] (channels) and [R,C]
/// (columns); all other axes must agree.
template <class T>
Var<T> concat(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ValidationError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  const int outer = s0[0];
  std::size_t inner = 1;
  for (std::size_t d = 2; d < s0.size(); ++d) inner *= s0[d];
  Shape out = s0;
  out[1] = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == s0.size() && s[0] == s0[0];
    for (std::size_t d = 2; ok && d < s.size(); ++d) ok = s[d] == s0[d];
    if (!ok) throw ValidationError("concat: incompatible shapes " + shape_str(s0) + " and " + shape_str(s));
    out[1] += s[1];
  }
  Tensor<T> y(out);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::size_t chunk = static_cast<std::size_t>(x.shape()[1]) * inner;
    for (int o = 0; o < outer; ++o) {
      std::copy_n(x.value().data.begin() + o * chunk, chunk,
                  y.data.begin() + o * static_cast<std::size_t>(out[1]) * inner + off);
    }
    off += chunk;
  }
  const std::size_t row = static_cast<std::size_t>(out[1]) * inner;
  return detail::make_result<T>(std::move(y), xs, [offsets, outer, row](Node<T>& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      auto* g = detail::grad_of(n, k);
      if (!g) continue;
      const std::size_t chunk = g->size() / outer;
      for (int o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < chunk; ++i) (*g)[o * chunk + i] += n.grad[o * row + offsets[k] + i];
    }
  });
}

template <class T>
Var<T> upsample(const Var<T>& x, int oh, int ow) {
  auto y = kern::upsample_nearest(x.value(), oh, ow);
  return detail::make_result<T>(std::move(y), {x}, [](Node<T>& n) {
    if (auto* g = detail::grad_of(n, 0)) kern::upsample_nearest_backward(n.grad, *g);
  });
}

/// [B,C,H,W] -> [B,C]
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> y({B, C});
  for (std::size_t bc = 0; bc < static_cast<std::size_t>(B) * C; ++bc) {
    T s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += x.value()[bc * hw + i];
    y[bc] = s / static_cast<T>(hw);
  }
  return detail::make_result<T>(std::move(y), {x}, [hw](Node<T>& n) {
    auto* g = detail::grad_of(n, 0);
    if (!g) return;
    for (std::size_t bc = 0; bc < n.grad.size(); ++bc)
      for (std::size_t i = 0; i < hw; ++i) (*g)[bc * hw + i] += n.grad[bc] / static_cast<T>(hw);
  });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto y = kern::matmul(a.value(), b.value());
  return detail::make_result<T>(std::move(y), {a, b}, [](Node<T>& n) {
    kern::matmul_backward(n.parents[0]->value, n.parents[1]->value, n.grad, detail::grad_of(n, 0),
                          detail::grad_of(n, 1));
  });
}

/// x [B,F], w [O,F], b [O] -> [B,O]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const int B = x.dim(0), F = x.dim(1), O = w.dim(0);
  if (w.dim(1) != F) throw ValidationError("linear: feature mismatch");
  Tensor<T> y({B, O});
  for (int i = 0; i < B; ++i)
    for (int o = 0; o < O; ++o) {
      T s = b.value()[o];
      for (int f = 0; f < F; ++f) s += x.value().at(i, f) * w.value().at(o, f);
      y.at(i, o) = s;
    }
  return detail::make_result<T>(std::move(y), {x, w, b}, [B, F, O](Node<T>& n) {
    auto* gx = detail::grad_of(n, 0);
    auto* gw = detail::grad_of(n, 1);
    auto* gb = detail::grad_of(n, 2);
    const auto& xv = n.parents[0]->value;
    const auto& wv = n.parents[1]->value;
    for (int i = 0; i < B; ++i)
      for (int o = 0; o < O; ++o) {
        const T g = n.grad.at(i, o);
        if (gb) (*gb)[o] += g;
        for (int f = 0; f < F; ++f) {
          if (gx) gx->at(i, f) += g * wv.at(o, f);
          if (gw) gw->at(o, f) += g * xv.at(i, f);
        }
      }
  });
}

template <class T>
Var<T> similarity(const Var<T>& mem_key, const Var<T>& mem_sel, const Var<T>& query, const Var<T>& shrink) {
  auto s = kern::similarity(mem_key.value(), mem_sel.value(), query.value(), shrink.value());
  return detail::make_result<T>(std::move(s), {mem_key, mem_sel, query, shrink}, [](Node<T>& n) {
    kern::similarity_backward(n.parents[0]->value, n.parents[1]->value, n.parents[2]->value,
                              n.parents[3]->value, n.grad, detail::grad_of(n, 0), detail::grad_of(n, 1),
                              detail::grad_of(n, 2), detail::grad_of(n, 3));
  });
}

template <class T>
Var<T> affinity(const Var<T>& s) {
  auto w = kern::affinity(s.value());
  return detail::make_result<T>(std::move(w), {s}, [](Node<T>& n) {
    if (auto* g = detail::grad_of(n, 0)) kern::affinity_backward(n.value, n.grad, *g);
  });
}

/// Mean binary cross-entropy between logits and targets in [0,1].
template <class T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& target) {
  require_same_shape(logits.value(), target, "bce_with_logits");
  const auto& z = logits.value();
  T total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const T v = z[i];
    total += std::max(v, T(0)) - v * target[i] + std::log1p(std::exp(-std::abs(v)));
  }
  const T count = static_cast<T>(z.size());
  Tensor<T> y({1}, std::vector<T>{total / count});
  return detail::make_result<T>(std::move(y), {logits}, [target, count](Node<T>& n) {
    auto* g = detail::grad_of(n, 0);
    if (!g) return;
    const auto& zv = n.parents[0]->value;
    const T scale = n.grad[0] / count;
    for (std::size_t i = 0; i < zv.size(); ++i) {
      const T p = T(1) / (T(1) + std::exp(-zv[i]));
      (*g)[i] += scale * (p - target[i]);
    }
  });
}

template <class T>
Var<T> sum_all(const std::vector<Var<T>>& xs) {
  T total = 0;
  for (const auto& x : xs) {
    if (x.value().size() != 1) throw ValidationError("sum_all: expected scalars");
    total += x.value()[0];
  }
  return detail::make_result<T>(Tensor<T>({1}, std::vector<T>{total}), xs, [](Node<T>& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k)
      if (auto* g = detail::grad_of(n, k)) (*g)[0] += n.grad[0];
  });
}

}  // namespace volseg::ag
