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

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "volseg/autograd.hpp"

namespace volseg::nn {

using ag::Var;

/// Ordered, named parameter registry. Names are the checkpoint keys.
template <class T>
class ParamSet {
 public:
  Var<T> add(std::string name, Tensor<T> init) {
    for (const auto& [n, _] : params_) {
      if (n == name) throw ParameterError("duplicate parameter name: " + name);
    }
    Var<T> v(std::move(init), true);
    params_.emplace_back(std::move(name), v);
    return v;
  }

  const std::vector<std::pair<std::string, Var<T>>>& items() const { return params_; }
  std::vector<std::pair<std::string, Var<T>>>& items() { return params_; }

  Var<T> find(const std::string& name) const {
    for (const auto& [n, v] : params_)
      if (n == name) return v;
    throw NotFoundError("no parameter named " + name);
  }

  void zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v.value().size();
    return n;
  }

  /// Overwrites values by name from another set (any scalar type).
  template <class U>
  void load_from(const ParamSet<U>& other) {
    for (auto& [name, v] : params_) {
      const auto& src = other.find(name).value();
      if (src.shape != v.value().shape) throw ValidationError("parameter shape mismatch for " + name);
      v.mutable_value() = src.template cast<T>();
    }
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
};

template <class T>
Tensor<T> he_normal(Shape shape, int fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / std::max(1, fan_in)));
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
struct Conv2d {
  Var<T> weight, bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(ParamSet<T>& ps, const std::string& name, int in, int out, int k, int stride_, std::mt19937_64& rng)
      : stride(stride_), pad(k / 2) {
    weight = ps.add(name + ".weight", he_normal<T>({out, in, k, k}, in * k * k, rng));
    bias = ps.add(name + ".bias", Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
};

template <class T>
struct Linear {
  Var<T> weight, bias;

  Linear() = default;
  Linear(ParamSet<T>& ps, const std::string& name, int in, int out, std::mt19937_64& rng) {
    weight = ps.add(name + ".weight", he_normal<T>({out, in}, in, rng));
    bias = ps.add(name + ".bias", Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return ag::linear(x, weight, bias); }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;
};

template <class T>
class Adam {
 public:
  Adam(ParamSet<T>& ps, AdamConfig cfg = {}) : ps_(ps), cfg_(cfg) {
    for (const auto& [_, v] : ps.items()) {
      m_.emplace_back(v.value().shape);
      v_.emplace_back(v.value().shape);
    }
  }

  void step() {
    ++t_;
    double norm2 = 0;
    for (auto& [_, p] : ps_.items()) {
      auto& g = p.grad();
      for (T x : g.data) norm2 += static_cast<double>(x) * x;
    }
    const double norm = std::sqrt(norm2);
    const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    const double bc1 = 1 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1 - std::pow(cfg_.beta2, t_);
    std::size_t k = 0;
    for (auto& [_, p] : ps_.items()) {
      auto& g = p.grad();
      auto& val = p.mutable_value();
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double gi = g[i] * clip;
        m_[k][i] = static_cast<T>(cfg_.beta1 * m_[k][i] + (1 - cfg_.beta1) * gi);
        v_[k][i] = static_cast<T>(cfg_.beta2 * v_[k][i] + (1 - cfg_.beta2) * gi * gi);
        const double mh = m_[k][i] / bc1;
        const double vh = v_[k][i] / bc2;
        val[i] -= static_cast<T>(cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
      ++k;
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  ParamSet<T>& ps_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
};

/// 64-bit FNV-1a, used to fingerprint training sets in checkpoint manifests.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 1099511628211ULL;
    }
  }
  template <class U>
  void update_values(const std::vector<U>& v) {
    update(v.data(), v.size() * sizeof(U));
  }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 1469598103934665603ULL;
};

}  // namespace volseg::nn
