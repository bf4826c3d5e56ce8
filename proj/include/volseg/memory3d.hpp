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

// Three-tier memory for slice propagation.
//
//   sensory    per-direction recurrent hidden state at stride 16
//   working    up to T_max recent (key, value) frames at stride 16
//   long-term  prototypes distilled from evicted working frames
//
// Reads use an anisotropic negative squared distance between memory keys and
// the query key, softmax over memory elements, then a weighted sum of values.

#include <algorithm>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"
#include "volseg/nn.hpp"
#include "volseg/volume.hpp"

namespace volseg {

inline constexpr int kFeatureStride = 16;

struct MemoryConfig {
  int key_channels = 16;
  int value_channels = 16;
  int hidden_channels = 8;
  int t_min = 5;
  int t_max = 10;
  int prototype_budget = 128;
  /// Every n-th propagated frame enters working memory (interaction frames always do).
  int cadence = 5;

  void validate() const {
    if (t_min < 1 || t_max <= t_min) throw ParameterError("memory capacity requires 1 <= T_min < T_max");
    if (prototype_budget < 1 || cadence < 1) throw ParameterError("prototype budget and cadence must be >= 1");
    if (key_channels < 1 || value_channels < 1 || hidden_channels < 1) throw ParameterError("channel counts must be >= 1");
  }
  nlohmann::json to_json() const {
    return {{"key_channels", key_channels}, {"value_channels", value_channels}, {"hidden_channels", hidden_channels},
            {"t_min", t_min},           {"t_max", t_max},                   {"prototype_budget", prototype_budget},
            {"cadence", cadence}};
  }
  static MemoryConfig from_json(const nlohmann::json& j) {
    MemoryConfig c;
    c.key_channels = j.value("key_channels", c.key_channels);
    c.value_channels = j.value("value_channels", c.value_channels);
    c.hidden_channels = j.value("hidden_channels", c.hidden_channels);
    c.t_min = j.value("t_min", c.t_min);
    c.t_max = j.value("t_max", c.t_max);
    c.prototype_budget = j.value("prototype_budget", c.prototype_budget);
    c.cadence = j.value("cadence", c.cadence);
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Read math on plain matrices: keys [C, M] / [C, Q], values [Cv, M].

template <class T>
Tensor<T> similarity(const Tensor<T>& mem_key, const Tensor<T>& mem_selection, const Tensor<T>& query,
                     const Tensor<T>& query_shrinkage) {
  return kern::similarity(mem_key, mem_selection, query, query_shrinkage);
}

template <class T>
Tensor<T> affinity(const Tensor<T>& s) {
  return kern::affinity(s);
}

template <class T>
Tensor<T> readout(const Tensor<T>& values, const Tensor<T>& weights) {
  if (values.rank() != 2 || weights.rank() != 2 || values.dim(1) != weights.dim(0)) {
    throw ValidationError("readout: values " + shape_str(values.shape) + " incompatible with weights " +
                          shape_str(weights.shape));
  }
  return kern::matmul(values, weights);
}

// ---------------------------------------------------------------------------
// Features

template <class T>
struct FeatureKey {
  ag::Var<T> key;        // [Ck, Q]
  ag::Var<T> shrinkage;  // [Q], >= 1
  ag::Var<T> selection;  // [Ck, Q], in (0, 1)
  int h = 0, w = 0;

  int positions() const { return h * w; }
};

template <class T>
struct FeatureValue {
  ag::Var<T> value;  // [Cv, Q]
  int h = 0, w = 0;
};

/// Query-encoder output: the key plus the multi-scale features the decoder
/// uses as skip connections.
template <class T>
struct QueryFeatures {
  FeatureKey<T> key;
  ag::Var<T> f16, f8, f4, f2;  // [1,C,H/s,W/s]
};

template <class T>
struct SensoryState {
  ag::Var<T> hidden;  // [1, Ch, h, w]
};

/// Query encoder, value encoder and the sensory-memory update cells.
template <class T>
class Encoders {
 public:
  using V = ag::Var<T>;

  Encoders() = default;
  Encoders(nn::ParamSet<T>& ps, const MemoryConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    q1_ = {ps, "query.c1", 1, 8, 3, 1, rng};
    q2_ = {ps, "query.c2", 8, 16, 3, 2, rng};
    q3_ = {ps, "query.c3", 16, 16, 3, 2, rng};
    q4_ = {ps, "query.c4", 16, 32, 3, 2, rng};
    q5_ = {ps, "query.c5", 32, 32, 3, 2, rng};
    key_ = {ps, "query.key", 32, cfg.key_channels, 1, 1, rng};
    shrink_ = {ps, "query.shrinkage", 32, 1, 1, 1, rng};
    select_ = {ps, "query.selection", 32, cfg.key_channels, 1, 1, rng};
    v1_ = {ps, "value.c1", 2, 8, 3, 2, rng};
    v2_ = {ps, "value.c2", 8, 16, 3, 2, rng};
    v3_ = {ps, "value.c3", 16, 16, 3, 2, rng};
    v4_ = {ps, "value.c4", 16, 32, 3, 2, rng};
    vproj_ = {ps, "value.proj", 32, cfg.value_channels, 1, 1, rng};
    const int ch = cfg.hidden_channels;
    s_gate_ = {ps, "sensory.gate", 32 + ch, ch, 3, 1, rng};
    s_cand_ = {ps, "sensory.cand", 32 + ch, ch, 3, 1, rng};
    d_gate_ = {ps, "sensory.deep_gate", cfg.value_channels + ch, ch, 3, 1, rng};
    d_cand_ = {ps, "sensory.deep_cand", cfg.value_channels + ch, ch, 3, 1, rng};
  }

  const MemoryConfig& config() const { return cfg_; }

  /// image [1,1,H,W]
  QueryFeatures<T> query(const V& image) const {
    using namespace ag;
    auto f1 = relu(q1_(image));
    auto f2 = relu(q2_(f1));
    auto f4 = relu(q3_(f2));
    auto f8 = relu(q4_(f4));
    auto f16 = relu(q5_(f8));
    const int h = f16.dim(2), w = f16.dim(3), q = h * w;
    FeatureKey<T> k;
    k.h = h;
    k.w = w;
    k.key = reshape(key_(f16), {cfg_.key_channels, q});
    k.shrinkage = affine(square(reshape(shrink_(f16), {q})), T(1), T(1));
    k.selection = sigmoid(reshape(select_(f16), {cfg_.key_channels, q}));
    return {k, f16, f8, f4, f2};
  }

  /// image [1,1,H,W], mask [1,1,H,W]
  FeatureValue<T> value(const V& image, const V& mask) const {
    using namespace ag;
    auto x = concat<T>({image, mask});
    auto f = relu(v4_(relu(v3_(relu(v2_(relu(v1_(x))))))));
    const int h = f.dim(2), w = f.dim(3);
    return {reshape(vproj_(f), {cfg_.value_channels, h * w}), h, w};
  }

  SensoryState<T> initial_sensory(int h, int w) const {
    return {ag::constant(Tensor<T>({1, cfg_.hidden_channels, h, w}))};
  }

  /// Gated update from decoder features at stride 16.
  SensoryState<T> update(const SensoryState<T>& s, const V& features) const {
    return {gated(s.hidden, features, s_gate_, s_cand_)};
  }

  /// Gated update from a value feature when a frame enters working memory.
  SensoryState<T> deep_update(const SensoryState<T>& s, const FeatureValue<T>& v) const {
    auto vf = ag::reshape(v.value, {1, cfg_.value_channels, v.h, v.w});
    return {gated(s.hidden, vf, d_gate_, d_cand_)};
  }

 private:
  static V gated(const V& h, const V& x, const nn::Conv2d<T>& gate, const nn::Conv2d<T>& cand) {
    using namespace ag;
    auto in = concat<T>({x, h});
    auto z = sigmoid(gate(in));
    auto c = ag::tanh(cand(in));
    // h + z * (c - h)
    return add(h, mul(z, add(c, affine(h, T(-1), T(0)))));
  }

  MemoryConfig cfg_;
  nn::Conv2d<T> q1_, q2_, q3_, q4_, q5_, key_, shrink_, select_;
  nn::Conv2d<T> v1_, v2_, v3_, v4_, vproj_;
  nn::Conv2d<T> s_gate_, s_cand_, d_gate_, d_cand_;
};

template <class T>
ag::Var<T> image_var(std::span<const float> slice, int rows, int cols) {
  if (slice.size() != static_cast<std::size_t>(rows) * cols) throw ValidationError("slice size does not match shape");
  Tensor<T> t({1, 1, rows, cols});
  std::transform(slice.begin(), slice.end(), t.data.begin(), [](float v) { return static_cast<T>(v); });
  return ag::constant(std::move(t));
}

template <class T>
ag::Var<T> mask_var(const BinaryMask& m) {
  Tensor<T> t({1, 1, m.rows(), m.cols()});
  std::transform(m.pixels().begin(), m.pixels().end(), t.data.begin(), [](std::uint8_t v) { return static_cast<T>(v); });
  return ag::constant(std::move(t));
}

template <class T>
QueryFeatures<T> encode_query(const Encoders<T>& enc, std::span<const float> slice, int rows, int cols) {
  return enc.query(image_var<T>(slice, rows, cols));
}

template <class T>
FeatureValue<T> encode_value(const Encoders<T>& enc, std::span<const float> slice, const BinaryMask& m) {
  if (slice.size() != m.size()) throw ValidationError("encode_value: slice and mask shapes differ");
  return enc.value(image_var<T>(slice, m.rows(), m.cols()), mask_var<T>(m));
}

// ---------------------------------------------------------------------------
// Working and long-term memory

template <class T>
struct MemoryEntry {
  FeatureKey<T> key;
  FeatureValue<T> value;
  bool is_interaction = false;
  int frame_index = 0;
  std::vector<double> usage;  // cumulative affinity per position
};

template <class T>
class WorkingMemory {
 public:
  WorkingMemory(int t_min = 5, int t_max = 10) : t_min_(t_min), t_max_(t_max) {
    if (t_min < 1 || t_max <= t_min) throw ParameterError("working memory requires 1 <= T_min < T_max");
  }

  int size() const { return static_cast<int>(entries_.size()); }
  int t_min() const { return t_min_; }
  int t_max() const { return t_max_; }
  bool full() const { return size() >= t_max_; }
  const std::vector<MemoryEntry<T>>& entries() const { return entries_; }
  std::vector<MemoryEntry<T>>& entries() { return entries_; }

 private:
  template <class U>
  friend WorkingMemory<U> add_to_working(WorkingMemory<U>, FeatureKey<U>, FeatureValue<U>, bool, int);

  int t_min_, t_max_;
  std::vector<MemoryEntry<T>> entries_;
};

template <class T>
struct LongTermMemory {
  Tensor<T> keys;       // [Ck, P]
  Tensor<T> selection;  // [Ck, P]
  Tensor<T> values;     // [Cv, P]
  std::vector<double> usage;

  int size() const { return static_cast<int>(usage.size()); }
};

/// Appends a frame. Throws CapacityError when the memory is already at T_max.
template <class T>
WorkingMemory<T> add_to_working(WorkingMemory<T> wm, FeatureKey<T> key, FeatureValue<T> value, bool is_interaction,
                                int frame_index) {
  if (wm.full()) throw CapacityError("working memory at T_max; consolidate before adding");
  if (key.positions() != value.h * value.w) throw ValidationError("key and value spatial sizes differ");
  MemoryEntry<T> e{std::move(key), std::move(value), is_interaction, frame_index, {}};
  e.usage.assign(e.key.positions(), 0.0);
  wm.entries_.push_back(std::move(e));
  return wm;
}

namespace memory_detail {

template <class T>
Tensor<T> concat_cols(const std::vector<const Tensor<T>*>& parts, int rows) {
  int cols = 0;
  for (auto* p : parts) cols += p->size() ? p->dim(1) : 0;
  Tensor<T> out({rows, cols});
  int off = 0;
  for (auto* p : parts) {
    if (!p->size()) continue;
    const int pc = p->dim(1);
    for (int r = 0; r < rows; ++r)
      std::copy_n(&p->data[static_cast<std::size_t>(r) * pc], pc, &out.data[static_cast<std::size_t>(r) * cols + off]);
    off += pc;
  }
  return out;
}

template <class T>
Tensor<T> gather_cols(const Tensor<T>& m, const std::vector<int>& idx) {
  Tensor<T> out({m.dim(0), static_cast<int>(idx.size())});
  for (int r = 0; r < m.dim(0); ++r)
    for (std::size_t j = 0; j < idx.size(); ++j) out.at(r, static_cast<int>(j)) = m.at(r, idx[j]);
  return out;
}

}  // namespace memory_detail

struct ConsolidationReport {
  int retained = 0;
  int candidates = 0;
  int prototypes = 0;
};

/// Moves all but the interaction frames and the most recent (T_min - 1)
/// other frames into long-term memory as at most `budget` prototypes.
template <class T>
std::pair<WorkingMemory<T>, LongTermMemory<T>> consolidate(WorkingMemory<T> wm, LongTermMemory<T> ltm, int budget,
                                                           ConsolidationReport* report = nullptr) {
  if (wm.size() != wm.t_max()) throw StateError("consolidate requires a full working memory");
  if (budget < 1) throw ParameterError("prototype budget must be >= 1");
  auto& entries = wm.entries();

  // Keep the newest (T_min - 1) non-interaction frames.
  std::vector<bool> keep(entries.size(), false);
  int recent = 0;
  for (int i = static_cast<int>(entries.size()) - 1; i >= 0; --i) {
    if (entries[i].is_interaction) {
      keep[i] = true;
    } else if (recent < wm.t_min() - 1) {
      keep[i] = true;
      ++recent;
    }
  }

  std::vector<MemoryEntry<T>> kept, cands;
  for (std::size_t i = 0; i < entries.size(); ++i) (keep[i] ? kept : cands).push_back(std::move(entries[i]));
  entries = std::move(kept);

  ConsolidationReport rep{wm.size(), static_cast<int>(cands.size()), 0};
  if (!cands.empty()) {
    const int ck = cands.front().key.key.dim(0);
    const int cv = cands.front().value.value.dim(0);
    std::vector<const Tensor<T>*> ks, es, vs, ss;
    std::vector<double> usage;
    Tensor<T> shrink_all;
    std::vector<T> shr;
    for (const auto& c : cands) {
      ks.push_back(&c.key.key.value());
      es.push_back(&c.key.selection.value());
      vs.push_back(&c.value.value.value());
      const auto& s = c.key.shrinkage.value();
      shr.insert(shr.end(), s.data.begin(), s.data.end());
      usage.insert(usage.end(), c.usage.begin(), c.usage.end());
    }
    const Tensor<T> cand_keys = memory_detail::concat_cols(ks, ck);
    const Tensor<T> cand_sel = memory_detail::concat_cols(es, ck);
    const Tensor<T> cand_vals = memory_detail::concat_cols(vs, cv);

    // Top positions by cumulative usage; ties resolved towards earlier positions.
    std::vector<int> order(usage.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return usage[a] > usage[b]; });
    order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(budget)));
    std::sort(order.begin(), order.end());

    const Tensor<T> proto_keys = memory_detail::gather_cols(cand_keys, order);
    const Tensor<T> proto_sel = memory_detail::gather_cols(cand_sel, order);
    Tensor<T> proto_shrink({static_cast<int>(order.size())});
    for (std::size_t j = 0; j < order.size(); ++j) proto_shrink[j] = shr[order[j]];

    const Tensor<T> w = affinity(similarity(cand_keys, cand_sel, proto_keys, proto_shrink));
    const Tensor<T> proto_vals = readout(cand_vals, w);

    ltm.keys = memory_detail::concat_cols<T>({&ltm.keys, &proto_keys}, ck);
    ltm.selection = memory_detail::concat_cols<T>({&ltm.selection, &proto_sel}, ck);
    ltm.values = memory_detail::concat_cols<T>({&ltm.values, &proto_vals}, cv);
    ltm.usage.resize(ltm.usage.size() + order.size(), 0.0);
    rep.prototypes = static_cast<int>(order.size());
  }
  if (report) *report = rep;
  return {std::move(wm), std::move(ltm)};
}

/// Reads memory for one query frame: long-term prototypes followed by the
/// working frames. Accumulates usage on every memory element.
template <class T>
ag::Var<T> read_memory(WorkingMemory<T>& wm, LongTermMemory<T>& ltm, const FeatureKey<T>& q) {
  using namespace ag;
  std::vector<Var<T>> keys, sels, vals;
  if (ltm.size()) {
    keys.push_back(constant(ltm.keys));
    sels.push_back(constant(ltm.selection));
    vals.push_back(constant(ltm.values));
  }
  for (const auto& e : wm.entries()) {
    keys.push_back(e.key.key);
    sels.push_back(e.key.selection);
    vals.push_back(e.value.value);
  }
  if (keys.empty()) throw StateError("read_memory: memory is empty");
  auto mk = keys.size() == 1 ? keys[0] : concat<T>(keys);
  auto me = sels.size() == 1 ? sels[0] : concat<T>(sels);
  auto mv = vals.size() == 1 ? vals[0] : concat<T>(vals);
  auto w = ag::affinity(ag::similarity(mk, me, q.key, q.shrinkage));

  const auto& wv = w.value();
  const int Q = wv.dim(1);
  int row = 0;
  auto accumulate = [&](std::vector<double>& usage) {
    for (auto& u : usage) {
      double s = 0;
      for (int j = 0; j < Q; ++j) s += wv.at(row, j);
      u += s;
      ++row;
    }
  };
  accumulate(ltm.usage);
  for (auto& e : wm.entries()) accumulate(e.usage);
  return ag::matmul(mv, w);
}

}  // namespace volseg
