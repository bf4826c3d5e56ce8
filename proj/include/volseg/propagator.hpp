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

#include <functional>
#include <future>
#include <random>
#include <vector>

#include "volseg/memory3d.hpp"
#include "volseg/volume.hpp"

namespace volseg {

/// Three upsampling stages (stride 16 -> 8 -> 4 -> 2) with skips from the
/// query encoder, then a 1x1 head and a final resize to full resolution.
template <class T>
class Decoder {
 public:
  using V = ag::Var<T>;

  Decoder() = default;
  Decoder(nn::ParamSet<T>& ps, const MemoryConfig& cfg, std::mt19937_64& rng) {
    in_ = {ps, "decoder.in", cfg.value_channels + cfg.hidden_channels + 32, 32, 3, 1, rng};
    up8_ = {ps, "decoder.up8", 32 + 32, 16, 3, 1, rng};
    up4_ = {ps, "decoder.up4", 16 + 16, 16, 3, 1, rng};
    up2_ = {ps, "decoder.up2", 16 + 16, 8, 3, 1, rng};
    head_ = {ps, "decoder.head", 8, 1, 1, 1, rng};
  }

  struct Output {
    V logits;    // [1,1,H,W]
    V features;  // [1,32,h,w] stride-16 features for the sensory update
  };

  Output operator()(const V& readout, const SensoryState<T>& sensory, const QueryFeatures<T>& q, int rows,
                    int cols) const {
    using namespace ag;
    const int h = q.key.h, w = q.key.w;
    if (readout.dim(1) != h * w || sensory.hidden.dim(2) != h || sensory.hidden.dim(3) != w) {
      throw ValidationError("decode: readout/sensory do not match the query feature grid");
    }
    auto r = reshape(readout, {1, readout.dim(0), h, w});
    auto x = relu(in_(concat<T>({r, sensory.hidden, q.f16})));
    auto y = relu(up8_(concat<T>({upsample(x, q.f8.dim(2), q.f8.dim(3)), q.f8})));
    y = relu(up4_(concat<T>({upsample(y, q.f4.dim(2), q.f4.dim(3)), q.f4})));
    y = relu(up2_(concat<T>({upsample(y, q.f2.dim(2), q.f2.dim(3)), q.f2})));
    return {upsample(head_(y), rows, cols), x};
  }

 private:
  nn::Conv2d<T> in_, up8_, up4_, up2_, head_;
};

/// Encoders + decoder sharing one parameter set (one checkpoint).
template <class T>
class PropagationModel {
 public:
  explicit PropagationModel(MemoryConfig cfg = {}, std::uint64_t seed = 3) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    enc_ = Encoders<T>(ps_, cfg, rng);
    dec_ = Decoder<T>(ps_, cfg, rng);
  }
  PropagationModel(const PropagationModel&) = delete;
  PropagationModel& operator=(const PropagationModel&) = delete;
  PropagationModel(PropagationModel&&) = default;
  PropagationModel& operator=(PropagationModel&&) = default;

  const Encoders<T>& encoders() const { return enc_; }
  const Decoder<T>& decoder() const { return dec_; }
  const MemoryConfig& config() const { return cfg_; }
  nn::ParamSet<T>& params() { return ps_; }
  const nn::ParamSet<T>& params() const { return ps_; }

 private:
  MemoryConfig cfg_;
  nn::ParamSet<T> ps_;
  Encoders<T> enc_;
  Decoder<T> dec_;
};

struct PropagationPlan {
  int prompt = 1;
  std::vector<int> forward;   // p+1 .. N
  std::vector<int> backward;  // p-1 .. 1

  static PropagationPlan make(int slices, int prompt) {
    if (prompt < 1 || prompt > slices) {
      throw ValidationError("prompt index " + std::to_string(prompt) + " outside [1, " + std::to_string(slices) + "]");
    }
    PropagationPlan p{prompt, {}, {}};
    for (int i = prompt + 1; i <= slices; ++i) p.forward.push_back(i);
    for (int i = prompt - 1; i >= 1; --i) p.backward.push_back(i);
    return p;
  }
};

/// Observes memory state after every frame of a directional pass.
struct MemoryEvent {
  int direction = 0;  // +1 forward, -1 backward
  int frame = 0;
  int working_size = 0;
  int long_term_size = 0;
  int interaction_entries = 0;
  bool consolidated = false;
  int prototypes_added = 0;
};
using MemoryHook = std::function<void(const MemoryEvent&)>;

struct DecodeResult {
  std::vector<float> prob;
  BinaryMask mask;
};

/// Decodes one frame from a memory readout.
template <class T>
DecodeResult decode(const Decoder<T>& dec, const ag::Var<T>& readout, const SensoryState<T>& sensory,
                    const QueryFeatures<T>& q, int rows, int cols, double threshold = 0.5) {
  ag::NoGradGuard no_grad;
  auto out = dec(readout, sensory, q, rows, cols);
  DecodeResult r{std::vector<float>(static_cast<std::size_t>(rows) * cols), BinaryMask(rows, cols)};
  for (std::size_t i = 0; i < r.prob.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(out.logits.value()[i])));
    r.prob[i] = static_cast<float>(p);
    r.mask.pixels()[i] = p >= threshold ? 1 : 0;
  }
  return r;
}

namespace prop_detail {

template <class T>
std::vector<std::pair<int, BinaryMask>> run_direction(const PropagationModel<T>& model, const Volume& vol, int prompt,
                                                      const BinaryMask& prompt_mask, const std::vector<int>& frames,
                                                      int direction, const MemoryHook& hook) {
  ag::NoGradGuard no_grad;
  std::vector<std::pair<int, BinaryMask>> out;
  if (frames.empty()) return out;
  const auto& cfg = model.config();
  const auto& enc = model.encoders();
  const int H = vol.rows(), W = vol.cols();

  WorkingMemory<T> wm(cfg.t_min, cfg.t_max);
  LongTermMemory<T> ltm;
  int consolidations_pending = 0, protos_pending = 0;
  auto insert = [&](FeatureKey<T> key, FeatureValue<T> value, bool interaction, int frame) {
    wm = add_to_working(std::move(wm), std::move(key), std::move(value), interaction, frame);
    if (wm.full()) {
      ConsolidationReport rep;
      std::tie(wm, ltm) = consolidate(std::move(wm), std::move(ltm), cfg.prototype_budget, &rep);
      ++consolidations_pending;
      protos_pending += rep.prototypes;
    }
  };

  auto qp = encode_query(enc, vol.slice(prompt), H, W);
  auto vp = encode_value(enc, vol.slice(prompt), prompt_mask);
  SensoryState<T> sensory = enc.initial_sensory(qp.key.h, qp.key.w);
  sensory = enc.deep_update(sensory, vp);
  insert(qp.key, vp, true, prompt);

  int step = 0;
  for (int f : frames) {
    ++step;
    auto q = encode_query(enc, vol.slice(f), H, W);
    auto r = read_memory(wm, ltm, q.key);
    auto decoded = model.decoder()(r, sensory, q, H, W);
    BinaryMask m(H, W, f);
    for (std::size_t i = 0; i < m.size(); ++i) m.pixels()[i] = decoded.logits.value()[i] >= T(0) ? 1 : 0;
    sensory = enc.update(sensory, decoded.features);
    if (step % cfg.cadence == 0) {
      auto v = encode_value(enc, vol.slice(f), m);
      sensory = enc.deep_update(sensory, v);
      insert(q.key, v, false, f);
    }
    if (hook) {
      int inter = 0;
      for (const auto& e : wm.entries()) inter += e.is_interaction;
      hook({direction, f, wm.size(), ltm.size(), inter, consolidations_pending > 0, protos_pending});
      consolidations_pending = 0;
      protos_pending = 0;
    }
    out.emplace_back(f, std::move(m));
  }
  return out;
}

}  // namespace prop_detail

struct PropagateOptions {
  bool parallel = false;
  MemoryHook hook;
};

/// Propagates the prompt mask through the whole volume, once in each
/// direction with independent memories. Slot p holds `prompt_mask` unchanged.
template <class T>
MaskSequence propagate(const Volume& vol, int prompt, const BinaryMask& prompt_mask, const PropagationModel<T>& model,
                       const PropagateOptions& opts = {}) {
  const PropagationPlan plan = PropagationPlan::make(vol.slices(), prompt);
  if (prompt_mask.rows() != vol.rows() || prompt_mask.cols() != vol.cols()) {
    throw ValidationError("propagate: prompt mask does not match slice shape");
  }
  std::vector<std::pair<int, BinaryMask>> fwd, bwd;
  if (opts.parallel) {
    auto f = std::async(std::launch::async, [&] {
      return prop_detail::run_direction(model, vol, prompt, prompt_mask, plan.forward, +1, opts.hook);
    });
    bwd = prop_detail::run_direction(model, vol, prompt, prompt_mask, plan.backward, -1, opts.hook);
    fwd = f.get();
  } else {
    fwd = prop_detail::run_direction(model, vol, prompt, prompt_mask, plan.forward, +1, opts.hook);
    bwd = prop_detail::run_direction(model, vol, prompt, prompt_mask, plan.backward, -1, opts.hook);
  }
  std::vector<BinaryMask> slots(vol.slices(), BinaryMask(vol.rows(), vol.cols()));
  std::vector<int> assigned(vol.slices(), 0);
  slots[prompt - 1] = prompt_mask;
  assigned[prompt - 1] = 1;
  for (auto* part : {&fwd, &bwd})
    for (auto& [idx, m] : *part) {
      slots[idx - 1] = std::move(m);
      ++assigned[idx - 1];
    }
  for (int a : assigned)
    if (a != 1) throw StateError("propagate: slice assigned " + std::to_string(a) + " times");
  return MaskSequence(std::move(slots));
}

// ---------------------------------------------------------------------------
// Training on short clips

struct TrainVolume {
  Volume volume;  // normalized
  MaskSequence gt;
};

struct PropagatorTrainConfig {
  int steps = 500;
  int clip_length = 4;
  int max_frame_gap = 2;
  double lr = 2e-3;
  std::uint64_t seed = 5;
};

/// Loss over one clip: the first frame enters memory with its ground truth,
/// each following frame is decoded, scored and written back with its own
/// binarized prediction.
template <class T>
ag::Var<T> clip_loss(const PropagationModel<T>& model, const Volume& vol, const MaskSequence& gt,
                     const std::vector<int>& frames) {
  using namespace ag;
  const auto& enc = model.encoders();
  const int H = vol.rows(), W = vol.cols();
  const int cap = static_cast<int>(frames.size()) + 1;
  WorkingMemory<T> wm(1, std::max(2, cap));
  LongTermMemory<T> ltm;
  auto q0 = encode_query(enc, vol.slice(frames[0]), H, W);
  auto v0 = encode_value(enc, vol.slice(frames[0]), gt[frames[0]]);
  auto sensory = enc.deep_update(enc.initial_sensory(q0.key.h, q0.key.w), v0);
  wm = add_to_working(std::move(wm), q0.key, v0, true, frames[0]);
  std::vector<Var<T>> losses;
  for (std::size_t k = 1; k < frames.size(); ++k) {
    const int f = frames[k];
    auto q = encode_query(enc, vol.slice(f), H, W);
    auto r = read_memory(wm, ltm, q.key);
    auto d = model.decoder()(r, sensory, q, H, W);
    Tensor<T> target({1, 1, H, W});
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = gt[f].pixels()[i];
    losses.push_back(bce_with_logits(d.logits, target));
    sensory = enc.update(sensory, d.features);
    BinaryMask pred(H, W, f);
    for (std::size_t i = 0; i < pred.size(); ++i) pred.pixels()[i] = d.logits.value()[i] >= T(0) ? 1 : 0;
    auto v = encode_value(enc, vol.slice(f), pred);
    sensory = enc.deep_update(sensory, v);
    if (!wm.full()) wm = add_to_working(std::move(wm), q.key, v, false, f);
  }
  return affine(sum_all<T>(losses), T(1) / static_cast<T>(losses.size()), T(0));
}

/// Picks clip frames: a start slice with foreground, a direction and a gap.
inline std::vector<int> sample_clip(const MaskSequence& gt, int length, int max_gap, std::mt19937_64& rng) {
  const int N = gt.size();
  std::vector<int> fg;
  for (int i = 1; i <= N; ++i)
    if (!gt[i].empty()) fg.push_back(i);
  std::uniform_int_distribution<int> any(1, N);
  const int start = fg.empty() ? any(rng) : fg[std::uniform_int_distribution<std::size_t>(0, fg.size() - 1)(rng)];
  const int gap = std::uniform_int_distribution<int>(1, std::max(1, max_gap))(rng);
  int dir = std::uniform_int_distribution<int>(0, 1)(rng) ? 1 : -1;
  if (start + dir * gap * (length - 1) < 1 || start + dir * gap * (length - 1) > N) dir = -dir;
  std::vector<int> frames;
  for (int k = 0; k < length; ++k) frames.push_back(std::clamp(start + dir * gap * k, 1, N));
  return frames;
}

inline PropagationModel<float> train_propagator(const std::vector<TrainVolume>& data, const PropagatorTrainConfig& tc,
                                                const MemoryConfig& arch = {}, std::vector<double>* losses = nullptr) {
  if (data.empty()) throw ParameterError("train_propagator: empty dataset");
  PropagationModel<float> model(arch, tc.seed);
  nn::Adam<float> opt(model.params(), {.lr = tc.lr});
  std::mt19937_64 rng(tc.seed * 7919 + 1);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (int step = 0; step < tc.steps; ++step) {
    const auto& tv = data[pick(rng)];
    const auto frames = sample_clip(tv.gt, tc.clip_length, tc.max_frame_gap, rng);
    model.params().zero_grad();
    auto loss = clip_loss(model, tv.volume, tv.gt, frames);
    ag::backward(loss);
    opt.step();
    if (losses) losses->push_back(loss.value()[0]);
  }
  return model;
}

}  // namespace volseg
