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

// Click-driven 2D segmentation of a single slice: click encoding, the
// interactor network, the simulated user, and interactor training.

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "volseg/corruptor.hpp"
#include "volseg/mask_ops.hpp"
#include "volseg/nn.hpp"
#include "volseg/volume.hpp"

namespace volseg {

enum class Polarity { positive, negative };

struct Click {
  int slice_index = 1;
  int row = 0;
  int col = 0;
  Polarity polarity = Polarity::positive;
  bool operator==(const Click&) const = default;
};

/// Channel 0 holds positive disks, channel 1 negative disks.
struct ClickMap {
  int rows = 0, cols = 0;
  std::vector<std::uint8_t> pos, neg;

  std::uint8_t at(int channel, int r, int c) const {
    return (channel == 0 ? pos : neg)[static_cast<std::size_t>(r) * cols + c];
  }
};

inline ClickMap encode_clicks(std::span<const Click> clicks, int rows, int cols, int radius) {
  if (radius < 1) throw ParameterError("click radius must be >= 1");
  if (rows < 1 || cols < 1) throw ValidationError("click map shape must be positive");
  ClickMap cm{rows, cols, std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols, 0),
              std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols, 0)};
  for (const auto& k : clicks) {
    if (k.row < 0 || k.row >= rows || k.col < 0 || k.col >= cols) {
      throw ValidationError("click (" + std::to_string(k.row) + "," + std::to_string(k.col) + ") out of bounds");
    }
    auto& ch = k.polarity == Polarity::positive ? cm.pos : cm.neg;
    for (int r = std::max(0, k.row - radius); r <= std::min(rows - 1, k.row + radius); ++r)
      for (int c = std::max(0, k.col - radius); c <= std::min(cols - 1, k.col + radius); ++c) {
        const int dr = r - k.row, dc = c - k.col;
        if (dr * dr + dc * dc <= radius * radius) ch[static_cast<std::size_t>(r) * cols + c] = 1;
      }
  }
  return cm;
}

struct InteractorConfig {
  int base_channels = 8;
  int click_radius = 5;
  double threshold = 0.5;

  nlohmann::json to_json() const {
    return {{"arch", "interactor-unet4"}, {"base_channels", base_channels}, {"click_radius", click_radius},
            {"threshold", threshold}};
  }
  static InteractorConfig from_json(const nlohmann::json& j) {
    InteractorConfig c;
    c.base_channels = j.at("base_channels").get<int>();
    c.click_radius = j.at("click_radius").get<int>();
    c.threshold = j.value("threshold", 0.5);
    return c;
  }
};

/// Four-level encoder-decoder with skip connections. Input channels:
/// intensity, positive clicks, negative clicks, previous mask.
template <class T>
class Interactor {
 public:
  using V = ag::Var<T>;

  explicit Interactor(InteractorConfig cfg = {}, std::uint64_t seed = 1) : cfg_(cfg) {
    std::mt19937_64 rng(seed);
    const int c = cfg.base_channels;
    e0a_ = {ps_, "enc0.a", 4, c, 3, 1, rng};
    e0b_ = {ps_, "enc0.b", c, c, 3, 1, rng};
    e1a_ = {ps_, "enc1.a", c, 2 * c, 3, 2, rng};
    e1b_ = {ps_, "enc1.b", 2 * c, 2 * c, 3, 1, rng};
    e2a_ = {ps_, "enc2.a", 2 * c, 4 * c, 3, 2, rng};
    e2b_ = {ps_, "enc2.b", 4 * c, 4 * c, 3, 1, rng};
    e3a_ = {ps_, "enc3.a", 4 * c, 4 * c, 3, 2, rng};
    e3b_ = {ps_, "enc3.b", 4 * c, 4 * c, 3, 1, rng};
    d2_ = {ps_, "dec2", 8 * c, 2 * c, 3, 1, rng};
    d1_ = {ps_, "dec1", 4 * c, c, 3, 1, rng};
    d0_ = {ps_, "dec0", 2 * c, c, 3, 1, rng};
    head_ = {ps_, "head", c, 1, 1, 1, rng};
  }

  Interactor(const Interactor&) = delete;
  Interactor& operator=(const Interactor&) = delete;
  Interactor(Interactor&&) = default;
  Interactor& operator=(Interactor&&) = default;

  /// x [B,4,H,W] -> logits [B,1,H,W]
  V forward(const V& x) const {
    using namespace ag;
    auto e0 = relu(e0b_(relu(e0a_(x))));
    auto e1 = relu(e1b_(relu(e1a_(e0))));
    auto e2 = relu(e2b_(relu(e2a_(e1))));
    auto e3 = relu(e3b_(relu(e3a_(e2))));
    auto d2 = relu(d2_(concat<T>({upsample(e3, e2.dim(2), e2.dim(3)), e2})));
    auto d1 = relu(d1_(concat<T>({upsample(d2, e1.dim(2), e1.dim(3)), e1})));
    auto d0 = relu(d0_(concat<T>({upsample(d1, e0.dim(2), e0.dim(3)), e0})));
    return head_(d0);
  }

  const InteractorConfig& config() const { return cfg_; }
  nn::ParamSet<T>& params() { return ps_; }
  const nn::ParamSet<T>& params() const { return ps_; }

 private:
  InteractorConfig cfg_;
  nn::ParamSet<T> ps_;
  nn::Conv2d<T> e0a_, e0b_, e1a_, e1b_, e2a_, e2b_, e3a_, e3b_, d2_, d1_, d0_, head_;
};

/// Packs one sample into channels [intensity, pos, neg, prev] of `x` at batch `b`.
template <class T>
void pack_interactor_input(Tensor<T>& x, int b, std::span<const float> slice, const ClickMap& cm,
                           const BinaryMask* prev) {
  const std::size_t hw = static_cast<std::size_t>(cm.rows) * cm.cols;
  T* base = &x.at(b, 0, 0, 0);
  for (std::size_t i = 0; i < hw; ++i) {
    base[i] = static_cast<T>(slice[i]);
    base[hw + i] = cm.pos[i];
    base[2 * hw + i] = cm.neg[i];
    base[3 * hw + i] = prev ? prev->pixels()[i] : 0;
  }
}

struct SliceSegmentation {
  std::vector<float> prob;
  BinaryMask mask;
};

/// Runs the interactor and then forces every click pixel to its polarity.
template <class T>
SliceSegmentation segment_slice(const Interactor<T>& net, std::span<const float> slice, int rows, int cols,
                                std::span<const Click> clicks, const BinaryMask* prev) {
  if (slice.size() != static_cast<std::size_t>(rows) * cols) throw ValidationError("segment_slice: slice size mismatch");
  if (prev && (prev->rows() != rows || prev->cols() != cols)) {
    throw ValidationError("segment_slice: previous mask shape mismatch");
  }
  const ClickMap cm = encode_clicks(clicks, rows, cols, net.config().click_radius);
  ag::NoGradGuard no_grad;
  Tensor<T> x({1, 4, rows, cols});
  pack_interactor_input(x, 0, slice, cm, prev);
  auto logits = net.forward(ag::constant(std::move(x)));
  SliceSegmentation out{std::vector<float>(slice.size()), BinaryMask(rows, cols)};
  for (std::size_t i = 0; i < slice.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.value()[i])));
    out.prob[i] = static_cast<float>(p);
    out.mask.pixels()[i] = p >= net.config().threshold ? 1 : 0;
  }
  for (const auto& k : clicks) out.mask.set(k.row, k.col, k.polarity == Polarity::positive);
  return out;
}

/// Next simulated click: innermost point of the largest error component.
/// Returns nullopt when pred equals gt (converged).
inline std::optional<Click> simulate_next_click(const BinaryMask& pred, const BinaryMask& gt, int slice_index = 1) {
  if (!pred.same_shape(gt)) throw ValidationError("simulate_next_click: shape mismatch");
  const int H = gt.rows(), W = gt.cols();
  BinaryMask fn(H, W), fp(H, W);
  bool any = false;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    fn.pixels()[i] = gt.pixels()[i] & static_cast<std::uint8_t>(!pred.pixels()[i]);
    fp.pixels()[i] = pred.pixels()[i] & static_cast<std::uint8_t>(!gt.pixels()[i]);
    any = any || fn.pixels()[i] || fp.pixels()[i];
  }
  if (!any) return std::nullopt;

  struct Candidate {
    std::size_t area;
    double dist2;
    int row, col;
    Polarity pol;
  };
  std::optional<Candidate> best;
  for (const auto& [err, pol] : {std::pair{&fn, Polarity::positive}, std::pair{&fp, Polarity::negative}}) {
    std::vector<maskops::Component> comps;
    const auto lab = maskops::label_components(*err, &comps);
    if (comps.empty()) continue;
    for (const auto& comp : comps) {
      std::vector<std::uint8_t> inside(err->size());
      for (std::size_t i = 0; i < inside.size(); ++i) inside[i] = lab[i] == comp.label;
      const auto d2 = maskops::squared_distance_to_outside(inside, H, W);
      Candidate c{comp.area, -1.0, 0, 0, pol};
      for (int r = 0; r < H; ++r)
        for (int col = 0; col < W; ++col) {
          const std::size_t i = static_cast<std::size_t>(r) * W + col;
          if (inside[i] && d2[i] > c.dist2) {
            c.dist2 = d2[i];
            c.row = r;
            c.col = col;
          }
        }
      const bool better = !best || c.area > best->area ||
                          (c.area == best->area && (c.row < best->row || (c.row == best->row && c.col < best->col)));
      if (better) best = c;
    }
  }
  return Click{slice_index, best->row, best->col, best->pol};
}

// ---------------------------------------------------------------------------
// Training

struct Sample2D {
  std::vector<float> slice;
  BinaryMask gt;
};

struct InteractorTrainConfig {
  int steps = 600;
  int batch = 4;
  double lr = 2e-3;
  std::uint64_t seed = 7;
  /// Probability that the previous-mask channel carries a corrupted ground
  /// truth. When false the channel carries the clean ground truth instead.
  bool corrupt_prev = true;
  double prev_prob = 0.7;
  /// Probability of one extra click round against the model's own prediction.
  double iterate_prob = 0.5;
  CorruptionSpec corruption{};
};

/// Builds a (prev mask, clicks) training state for one sample.
inline std::pair<BinaryMask, std::vector<Click>> initial_click_state(const Sample2D& s, bool corrupt_prev,
                                                                      double prev_prob, const CorruptionSpec& spec,
                                                                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BinaryMask prev(s.gt.rows(), s.gt.cols());
  if (u(rng) < prev_prob) prev = corrupt_prev ? corrupt_mask(s.gt, rng, spec) : s.gt;
  std::vector<Click> clicks;
  if (auto c = simulate_next_click(prev, s.gt)) {
    clicks.push_back(*c);
  } else if (!s.gt.empty()) {
    // prev already matches gt: confirm with a positive click on a random gt pixel.
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < s.gt.size(); ++i)
      if (s.gt.pixels()[i]) fg.push_back(i);
    const std::size_t pick = fg[std::uniform_int_distribution<std::size_t>(0, fg.size() - 1)(rng)];
    clicks.push_back({1, static_cast<int>(pick / s.gt.cols()), static_cast<int>(pick % s.gt.cols()), Polarity::positive});
  }
  return {prev, clicks};
}

template <class T>
ag::Var<T> interactor_loss(const Interactor<T>& net, const std::vector<const Sample2D*>& batch,
                           const std::vector<BinaryMask>& prevs, const std::vector<std::vector<Click>>& clicks) {
  const int H = batch.front()->gt.rows(), W = batch.front()->gt.cols();
  const int B = static_cast<int>(batch.size());
  Tensor<T> x({B, 4, H, W});
  Tensor<T> target({B, 1, H, W});
  for (int b = 0; b < B; ++b) {
    const ClickMap cm = encode_clicks(clicks[b], H, W, net.config().click_radius);
    pack_interactor_input(x, b, batch[b]->slice, cm, &prevs[b]);
    for (std::size_t i = 0; i < batch[b]->gt.size(); ++i) target[b * batch[b]->gt.size() + i] = batch[b]->gt.pixels()[i];
  }
  return ag::bce_with_logits(net.forward(ag::constant(std::move(x))), target);
}

struct TrainLog {
  std::vector<double> losses;
};

inline Interactor<float> train_interactor(const std::vector<Sample2D>& data, const InteractorTrainConfig& tc,
                                          const InteractorConfig& arch = {}, TrainLog* log = nullptr) {
  if (data.empty()) throw ParameterError("train_interactor: empty dataset");
  tc.corruption.validate();
  Interactor<float> net(arch, tc.seed);
  nn::Adam<float> opt(net.params(), {.lr = tc.lr});
  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int step = 0; step < tc.steps; ++step) {
    std::vector<const Sample2D*> batch;
    std::vector<BinaryMask> prevs;
    std::vector<std::vector<Click>> clicks;
    for (int b = 0; b < tc.batch; ++b) {
      const Sample2D& s = data[pick(rng)];
      auto [prev, cl] = initial_click_state(s, tc.corrupt_prev, tc.prev_prob, tc.corruption, rng);
      if (u(rng) < tc.iterate_prob) {
        auto seg = segment_slice(net, s.slice, s.gt.rows(), s.gt.cols(), cl, &prev);
        if (auto c = simulate_next_click(seg.mask, s.gt)) cl.push_back(*c);
        prev = seg.mask;
      }
      batch.push_back(&s);
      prevs.push_back(std::move(prev));
      clicks.push_back(std::move(cl));
    }
    net.params().zero_grad();
    auto loss = interactor_loss(net, batch, prevs, clicks);
    ag::backward(loss);
    opt.step();
    if (log) log->losses.push_back(loss.value()[0]);
  }
  return net;
}

}  // namespace volseg
