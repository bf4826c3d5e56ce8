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

// Multi-round fusion: per slice, keep the previous round's mask when the
// quality network says it is better, otherwise take the current one.

#include <cmath>
#include <random>
#include <vector>

#include "json.hpp"
#include "volseg/corruptor.hpp"
#include "volseg/nn.hpp"
#include "volseg/volume.hpp"

namespace volseg {

enum class Choice : std::uint8_t { curr = 0, prev = 1 };

struct QualityScores {
  std::vector<double> P;  // P[i-1]: probability the previous mask of slice i is better
  int round_prev = 0, round_curr = 0;
  double tau = 0.5;
};

struct FusionResult {
  MaskSequence fused;
  std::vector<Choice> decisions;
  double objective = 0;
};

struct QualityNetConfig {
  int width = 8;
  double tau = 0.5;
  int batch = 8;

  nlohmann::json to_json() const { return {{"arch", "quality-resnet3"}, {"width", width}, {"tau", tau}, {"batch", batch}}; }
  static QualityNetConfig from_json(const nlohmann::json& j) {
    QualityNetConfig c;
    c.width = j.at("width").get<int>();
    c.tau = j.value("tau", c.tau);
    c.batch = j.value("batch", c.batch);
    if (c.width < 1 || c.batch < 1 || !(c.tau > 0 && c.tau < 1)) throw ParameterError("invalid quality net config");
    return c;
  }
};

/// Small residual classifier over (slice, mask_prev, mask_curr). No batch
/// statistics anywhere, so scores do not depend on how slices are batched.
template <class T>
class QualityNet {
 public:
  using V = ag::Var<T>;

  explicit QualityNet(QualityNetConfig cfg = {}, std::uint64_t seed = 9) : cfg_(cfg) {
    std::mt19937_64 rng(seed);
    const int c = cfg.width;
    stem_ = {ps_, "stem", 3, c, 3, 2, rng};
    r1a_ = {ps_, "res1.a", c, c, 3, 1, rng};
    r1b_ = {ps_, "res1.b", c, c, 3, 1, rng};
    down2_ = {ps_, "down2", c, 2 * c, 3, 2, rng};
    r2a_ = {ps_, "res2.a", 2 * c, 2 * c, 3, 1, rng};
    r2b_ = {ps_, "res2.b", 2 * c, 2 * c, 3, 1, rng};
    down3_ = {ps_, "down3", 2 * c, 4 * c, 3, 2, rng};
    r3a_ = {ps_, "res3.a", 4 * c, 4 * c, 3, 1, rng};
    r3b_ = {ps_, "res3.b", 4 * c, 4 * c, 3, 1, rng};
    fc_ = {ps_, "fc", 4 * c, 1, rng};
  }
  QualityNet(const QualityNet&) = delete;
  QualityNet& operator=(const QualityNet&) = delete;
  QualityNet(QualityNet&&) = default;
  QualityNet& operator=(QualityNet&&) = default;

  /// x [B,3,H,W] -> logits [B,1]
  V forward(const V& x) const {
    using namespace ag;
    auto block = [](const V& h, const nn::Conv2d<T>& a, const nn::Conv2d<T>& b) { return relu(add(h, b(relu(a(h))))); };
    auto h = relu(stem_(x));
    h = block(h, r1a_, r1b_);
    h = block(relu(down2_(h)), r2a_, r2b_);
    h = block(relu(down3_(h)), r3a_, r3b_);
    return fc_(global_avg_pool(h));
  }

  const QualityNetConfig& config() const { return cfg_; }
  nn::ParamSet<T>& params() { return ps_; }
  const nn::ParamSet<T>& params() const { return ps_; }

 private:
  QualityNetConfig cfg_;
  nn::ParamSet<T> ps_;
  nn::Conv2d<T> stem_, r1a_, r1b_, down2_, r2a_, r2b_, down3_, r3a_, r3b_;
  nn::Linear<T> fc_;
};

template <class T>
void pack_quality_input(Tensor<T>& x, int b, std::span<const float> slice, const BinaryMask& prev,
                        const BinaryMask& curr) {
  const std::size_t hw = prev.size();
  T* base = &x.at(b, 0, 0, 0);
  for (std::size_t i = 0; i < hw; ++i) {
    base[i] = static_cast<T>(slice[i]);
    base[hw + i] = prev.pixels()[i];
    base[2 * hw + i] = curr.pixels()[i];
  }
}

/// Scores every slice in batches of `batch`.
template <class T>
QualityScores assess_quality(const QualityNet<T>& net, const Volume& vol, const MaskSequence& prev,
                             const MaskSequence& curr, int batch) {
  if (batch < 1) throw ParameterError("assess_quality: batch must be >= 1");
  if (prev.size() != vol.slices() || curr.size() != vol.slices()) {
    throw ValidationError("assess_quality: sequence lengths do not match the volume");
  }
  if (prev.rows() != vol.rows() || prev.cols() != vol.cols() || curr.rows() != vol.rows() || curr.cols() != vol.cols()) {
    throw ValidationError("assess_quality: mask shape does not match the volume");
  }
  ag::NoGradGuard no_grad;
  const int N = vol.slices(), H = vol.rows(), W = vol.cols();
  QualityScores q;
  q.tau = net.config().tau;
  q.P.resize(N);
  for (int start = 1; start <= N; start += batch) {
    const int B = std::min(batch, N - start + 1);
    Tensor<T> x({B, 3, H, W});
    for (int b = 0; b < B; ++b) pack_quality_input(x, b, vol.slice(start + b), prev[start + b], curr[start + b]);
    auto logits = net.forward(ag::constant(std::move(x)));
    for (int b = 0; b < B; ++b) q.P[start + b - 1] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.value()[b])));
  }
  return q;
}

namespace mrf_detail {
inline void check_fusion_inputs(const MaskSequence& prev, const MaskSequence& curr, const std::vector<double>& P) {
  if (prev.size() != curr.size() || static_cast<int>(P.size()) != prev.size()) {
    throw ValidationError("fusion: lengths differ (prev " + std::to_string(prev.size()) + ", curr " +
                          std::to_string(curr.size()) + ", P " + std::to_string(P.size()) + ")");
  }
  if (prev.size() && (prev.rows() != curr.rows() || prev.cols() != curr.cols())) {
    throw ValidationError("fusion: mask shapes differ");
  }
}

inline FusionResult assemble(const MaskSequence& prev, const MaskSequence& curr, const std::vector<double>& P,
                             std::vector<Choice> d) {
  std::vector<BinaryMask> out;
  out.reserve(d.size());
  double obj = 0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    const int i = static_cast<int>(k) + 1;
    out.push_back(d[k] == Choice::prev ? prev[i] : curr[i]);
    obj += d[k] == Choice::prev ? P[k] : 1.0 - P[k];
  }
  return {MaskSequence(std::move(out)), std::move(d), obj};
}
}  // namespace mrf_detail

/// Value of the fusion objective for a given selection.
inline double fusion_objective(const std::vector<double>& P, const std::vector<Choice>& d) {
  if (P.size() != d.size()) throw ValidationError("fusion_objective: lengths differ");
  double obj = 0;
  for (std::size_t k = 0; k < d.size(); ++k) obj += d[k] == Choice::prev ? P[k] : 1.0 - P[k];
  return obj;
}

/// Threshold rule: prev when P_i > tau, else curr. The prompt slice of the
/// current round always comes from curr; pass 0 for no prompt.
inline FusionResult fuse(const MaskSequence& prev, const MaskSequence& curr, const std::vector<double>& P, double tau,
                         int prompt_index) {
  mrf_detail::check_fusion_inputs(prev, curr, P);
  if (!(tau > 0 && tau < 1)) throw ParameterError("fuse: tau must lie in (0, 1)");
  if (prompt_index < 0 || prompt_index > prev.size()) throw ValidationError("fuse: prompt index out of range");
  std::vector<Choice> d(P.size());
  for (std::size_t k = 0; k < P.size(); ++k) d[k] = P[k] > tau ? Choice::prev : Choice::curr;
  if (prompt_index > 0) d[prompt_index - 1] = Choice::curr;
  return mrf_detail::assemble(prev, curr, P, std::move(d));
}

/// Maximizes sum_i P_i [prev_i] + (1 - P_i) [curr_i]. The objective separates
/// per slice, so each term is maximized on its own; ties go to curr.
inline FusionResult solve_fusion_objective(const MaskSequence& prev, const MaskSequence& curr,
                                           const std::vector<double>& P) {
  mrf_detail::check_fusion_inputs(prev, curr, P);
  std::vector<Choice> d(P.size());
  for (std::size_t k = 0; k < P.size(); ++k) d[k] = P[k] > 1.0 - P[k] ? Choice::prev : Choice::curr;
  return mrf_detail::assemble(prev, curr, P, std::move(d));
}

/// P_i = 1 iff the previous mask scores strictly higher Dice against gt.
inline std::vector<double> oracle_scores(const MaskSequence& prev, const MaskSequence& curr, const MaskSequence& gt) {
  std::vector<double> P(prev.size());
  for (int i = 1; i <= prev.size(); ++i) P[i - 1] = dice(prev[i], gt[i]) > dice(curr[i], gt[i]) ? 1.0 : 0.0;
  return P;
}

// ---------------------------------------------------------------------------
// Training

struct QualityTrainConfig {
  int steps = 400;
  int batch = 8;
  double lr = 2e-3;
  std::uint64_t seed = 13;
  /// Probability of presenting a pair swapped (and its label flipped).
  double swap_prob = 0.5;
};

template <class T>
ag::Var<T> quality_loss(const QualityNet<T>& net, const std::vector<const DefectPair*>& batch,
                        const std::vector<bool>& swapped) {
  const int H = batch.front()->mask_a.rows(), W = batch.front()->mask_a.cols();
  const int B = static_cast<int>(batch.size());
  Tensor<T> x({B, 3, H, W});
  Tensor<T> y({B, 1});
  for (int b = 0; b < B; ++b) {
    const DefectPair& p = *batch[b];
    // "prev" is mask_a unless swapped.
    const bool s = swapped[b];
    pack_quality_input(x, b, p.slice, s ? p.mask_b : p.mask_a, s ? p.mask_a : p.mask_b);
    y[b] = static_cast<T>(s ? (p.dice_b > p.dice_a ? 1 : 0) : p.label);
  }
  return ag::bce_with_logits(net.forward(ag::constant(std::move(x))), y);
}

inline QualityNet<float> train_quality_net(const std::vector<DefectPair>& pairs, const QualityTrainConfig& tc,
                                           const QualityNetConfig& arch = {}, std::vector<double>* losses = nullptr) {
  if (pairs.empty()) throw ParameterError("train_quality_net: empty dataset");
  QualityNet<float> net(arch, tc.seed);
  nn::Adam<float> opt(net.params(), {.lr = tc.lr});
  std::mt19937_64 rng(tc.seed * 2654435761ULL + 17);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  std::bernoulli_distribution swap(tc.swap_prob);
  for (int step = 0; step < tc.steps; ++step) {
    std::vector<const DefectPair*> batch;
    std::vector<bool> swapped;
    for (int b = 0; b < tc.batch; ++b) {
      batch.push_back(&pairs[pick(rng)]);
      swapped.push_back(swap(rng));
    }
    net.params().zero_grad();
    auto loss = quality_loss(net, batch, swapped);
    ag::backward(loss);
    opt.step();
    if (losses) losses->push_back(loss.value()[0]);
  }
  return net;
}

/// Fraction of pairs whose predicted side matches the label.
template <class T>
double quality_accuracy(const QualityNet<T>& net, const std::vector<DefectPair>& pairs) {
  if (pairs.empty()) return 0.0;
  ag::NoGradGuard no_grad;
  std::size_t hit = 0;
  for (const auto& p : pairs) {
    Tensor<T> x({1, 3, p.mask_a.rows(), p.mask_a.cols()});
    pack_quality_input(x, 0, p.slice, p.mask_a, p.mask_b);
    const bool pred = net.forward(ag::constant(std::move(x))).value()[0] > T(0);
    hit += pred == (p.label == 1);
  }
  return static_cast<double>(hit) / static_cast<double>(pairs.size());
}

}  // namespace volseg
