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

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "volseg/error.hpp"

namespace volseg {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. Conv paths use NCHW; memory math uses 2D
/// [channels, elements] matrices.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape)) {
      throw ValidationError("tensor data size " + std::to_string(data.size()) +
                            " does not match shape " + shape_str(shape));
    }
  }

  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }

  T& at(int n, int c, int y, int x) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  const T& at(int n, int c, int y, int x) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  std::span<T> flat() { return data; }
  std::span<const T> flat() const { return data; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != data.size()) {
      throw ValidationError("cannot reshape " + shape_str(shape) + " to " + shape_str(s));
    }
    return Tensor(std::move(s), data);
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const Tensor&) const = default;
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape != b.shape) {
    throw ValidationError(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
  }
}

}  // namespace volseg
