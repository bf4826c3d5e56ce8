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

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "volseg/error.hpp"

namespace volseg {

enum class DType { float32, int16 };

inline const char* dtype_name(DType d) { return d == DType::float32 ? "float32" : "int16"; }

struct Spacing {
  double z = 1.0, y = 1.0, x = 1.0;
  bool operator==(const Spacing&) const = default;
};

/// N slices of H x W intensities, slice-major. Slice indices in the public
/// API are 1-based.
class Volume {
 public:
  Volume() = default;
  Volume(int slices, int rows, int cols, std::vector<float> voxels, Spacing spacing = {},
         DType source_dtype = DType::float32, std::string id = {})
      : n_(slices), h_(rows), w_(cols), voxels_(std::move(voxels)), spacing_(spacing), dtype_(source_dtype),
        id_(std::move(id)) {
    if (n_ < 1 || h_ < 1 || w_ < 1) throw ValidationError("volume dims must be positive");
    if (voxels_.size() != static_cast<std::size_t>(n_) * h_ * w_) {
      throw ValidationError("volume voxel count does not match dims");
    }
  }

  int slices() const { return n_; }
  int rows() const { return h_; }
  int cols() const { return w_; }
  std::size_t slice_size() const { return static_cast<std::size_t>(h_) * w_; }
  const Spacing& spacing() const { return spacing_; }
  DType source_dtype() const { return dtype_; }
  const std::string& id() const { return id_; }
  const std::vector<float>& voxels() const { return voxels_; }

  std::span<const float> slice(int index) const {
    check_index(index);
    return {voxels_.data() + (index - 1) * slice_size(), slice_size()};
  }

  float at(int index, int r, int c) const { return slice(index)[static_cast<std::size_t>(r) * w_ + c]; }

  void check_index(int index) const {
    if (index < 1 || index > n_) {
      throw ValidationError("slice index " + std::to_string(index) + " outside [1, " + std::to_string(n_) + "]");
    }
  }

 private:
  int n_ = 0, h_ = 0, w_ = 0;
  std::vector<float> voxels_;
  Spacing spacing_;
  DType dtype_ = DType::float32;
  std::string id_;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int rows, int cols, int slice_index = 1)
      : h_(rows), w_(cols), slice_(slice_index), px_(static_cast<std::size_t>(rows) * cols, 0) {
    if (rows < 1 || cols < 1) throw ValidationError("mask dims must be positive");
  }
  BinaryMask(int rows, int cols, std::vector<std::uint8_t> pixels, int slice_index = 1)
      : h_(rows), w_(cols), slice_(slice_index), px_(std::move(pixels)) {
    if (rows < 1 || cols < 1) throw ValidationError("mask dims must be positive");
    if (px_.size() != static_cast<std::size_t>(rows) * cols) throw ValidationError("mask pixel count mismatch");
    for (auto v : px_)
      if (v > 1) throw ValidationError("mask values must be 0 or 1");
  }

  int rows() const { return h_; }
  int cols() const { return w_; }
  int slice_index() const { return slice_; }
  void set_slice_index(int i) { slice_ = i; }
  std::size_t size() const { return px_.size(); }

  std::uint8_t operator()(int r, int c) const { return px_[static_cast<std::size_t>(r) * w_ + c]; }
  void set(int r, int c, bool v) { px_[static_cast<std::size_t>(r) * w_ + c] = v ? 1 : 0; }
  bool in_bounds(int r, int c) const { return r >= 0 && r < h_ && c >= 0 && c < w_; }

  const std::vector<std::uint8_t>& pixels() const { return px_; }
  std::vector<std::uint8_t>& pixels() { return px_; }

  std::size_t area() const {
    std::size_t a = 0;
    for (auto v : px_) a += v;
    return a;
  }
  bool empty() const { return area() == 0; }
  bool same_shape(const BinaryMask& o) const { return h_ == o.h_ && w_ == o.w_; }

  /// Pixel equality; slice index is metadata and not compared.
  bool operator==(const BinaryMask& o) const { return h_ == o.h_ && w_ == o.w_ && px_ == o.px_; }

 private:
  int h_ = 0, w_ = 0, slice_ = 1;
  std::vector<std::uint8_t> px_;
};

/// Exactly one mask per slice; entry k (0-based storage) carries slice index k+1.
class MaskSequence {
 public:
  MaskSequence() = default;
  explicit MaskSequence(std::vector<BinaryMask> masks) : masks_(std::move(masks)) {
    for (std::size_t k = 0; k < masks_.size(); ++k) {
      if (!masks_[k].same_shape(masks_.front())) throw ValidationError("mask sequence entries differ in shape");
      masks_[k].set_slice_index(static_cast<int>(k) + 1);
    }
  }

  static MaskSequence empty(int slices, int rows, int cols) {
    std::vector<BinaryMask> m;
    m.reserve(slices);
    for (int i = 1; i <= slices; ++i) m.emplace_back(rows, cols, i);
    return MaskSequence(std::move(m));
  }

  int size() const { return static_cast<int>(masks_.size()); }
  int rows() const { return masks_.empty() ? 0 : masks_.front().rows(); }
  int cols() const { return masks_.empty() ? 0 : masks_.front().cols(); }

  const BinaryMask& operator[](int index) const { return masks_.at(check(index)); }
  const std::vector<BinaryMask>& masks() const { return masks_; }

  MaskSequence with(int index, BinaryMask m) const {
    MaskSequence out = *this;
    m.set_slice_index(index);
    if (!m.same_shape(masks_.at(check(index)))) throw ValidationError("replacement mask has wrong shape");
    out.masks_[index - 1] = std::move(m);
    return out;
  }

  bool operator==(const MaskSequence& o) const { return masks_ == o.masks_; }

 private:
  std::size_t check(int index) const {
    if (index < 1 || index > size()) throw ValidationError("mask index out of range");
    return static_cast<std::size_t>(index - 1);
  }
  std::vector<BinaryMask> masks_;
};

/// 2|a∩b| / (|a|+|b|); two empty masks score 1.
inline double dice(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw ValidationError("dice: mask shapes differ");
  std::size_t inter = 0, sa = 0, sb = 0;
  const auto& pa = a.pixels();
  const auto& pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    inter += pa[i] & pb[i];
    sa += pa[i];
    sb += pb[i];
  }
  if (sa + sb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sa + sb);
}

inline std::vector<double> per_slice_dice(const MaskSequence& a, const MaskSequence& b) {
  if (a.size() != b.size()) throw ValidationError("dice: sequence lengths differ");
  std::vector<double> d;
  d.reserve(a.size());
  for (int i = 1; i <= a.size(); ++i) d.push_back(dice(a[i], b[i]));
  return d;
}

inline double mean_dice(const MaskSequence& a, const MaskSequence& b) {
  auto d = per_slice_dice(a, b);
  double s = 0;
  for (double v : d) s += v;
  return d.empty() ? 0.0 : s / static_cast<double>(d.size());
}

}  // namespace volseg
