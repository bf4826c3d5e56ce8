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

// Interaction loop: clicks on one slice -> prompt mask -> bidirectional
// propagation -> fusion with the previous round. Also the simulated user and
// the multi-volume evaluation.

#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "volseg/config.hpp"
#include "volseg/interact2d.hpp"
#include "volseg/mrf.hpp"
#include "volseg/propagator.hpp"
#include "volseg/volume_io.hpp"

namespace volseg {

/// The three model stages as plain callables so stubs can stand in for
/// trained networks.
struct Pipeline {
  std::function<BinaryMask(const Volume&, int slice, std::span<const Click>, const BinaryMask* prior)> segment;
  std::function<MaskSequence(const Volume&, int prompt, const BinaryMask&)> propagate;
  /// P_i per slice; only called from round 2 on.
  std::function<std::vector<double>(const Volume&, const MaskSequence& prev, const MaskSequence& curr)> score;
};

inline Pipeline make_pipeline(const Interactor<float>& interactor, const PropagationModel<float>& propagator,
                              const QualityNet<float>* quality, int quality_batch = 8, bool parallel = false) {
  Pipeline p;
  p.segment = [&interactor](const Volume& v, int k, std::span<const Click> clicks, const BinaryMask* prior) {
    return segment_slice(interactor, v.slice(k), v.rows(), v.cols(), clicks, prior).mask;
  };
  p.propagate = [&propagator, parallel](const Volume& v, int k, const BinaryMask& m) {
    return volseg::propagate(v, k, m, propagator, {.parallel = parallel, .hook = {}});
  };
  if (quality) {
    p.score = [quality, quality_batch](const Volume& v, const MaskSequence& prev, const MaskSequence& curr) {
      return assess_quality(*quality, v, prev, curr, quality_batch).P;
    };
  }
  return p;
}

/// Scorer that knows the ground truth (P_i = 1 iff prev has strictly higher Dice).
inline Pipeline with_oracle_scores(Pipeline p, const MaskSequence& gt) {
  p.score = [gt](const Volume&, const MaskSequence& prev, const MaskSequence& curr) {
    return oracle_scores(prev, curr, gt);
  };
  return p;
}

struct Round {
  int number = 0;
  std::vector<Click> clicks;
  int prompt_index = 0;
  BinaryMask prompt_mask;
  MaskSequence raw;
  MaskSequence fused;
  std::vector<Choice> decisions;
  std::vector<double> scores;
  std::vector<double> slice_dice;  // against gt, when present
  double mean_dice = std::numeric_limits<double>::quiet_NaN();
};

class Session {
 public:
  Session(std::string id, std::shared_ptr<const Volume> volume, std::optional<MaskSequence> gt, EngineConfig cfg,
          std::string volume_ref = {})
      : id_(std::move(id)), volume_(std::move(volume)), gt_(std::move(gt)), cfg_(cfg), volume_ref_(std::move(volume_ref)) {
    if (!volume_) throw ValidationError("session requires a volume");
    if (gt_ && (gt_->size() != volume_->slices() || gt_->rows() != volume_->rows() || gt_->cols() != volume_->cols())) {
      throw ValidationError("ground truth does not match the volume");
    }
    cfg_.validate();
  }

  const std::string& id() const { return id_; }
  const Volume& volume() const { return *volume_; }
  const std::optional<MaskSequence>& gt() const { return gt_; }
  const EngineConfig& config() const { return cfg_; }
  const std::string& volume_ref() const { return volume_ref_; }
  const std::vector<Round>& rounds() const { return rounds_; }

  /// The stored sequence of the latest round, or nullptr before round 1.
  const MaskSequence* current() const { return rounds_.empty() ? nullptr : &rounds_.back().fused; }

 private:
  friend const Round& run_round(Session&, const Pipeline&, std::vector<Click>);

  std::string id_;
  std::shared_ptr<const Volume> volume_;
  std::optional<MaskSequence> gt_;
  EngineConfig cfg_;
  std::string volume_ref_;
  std::vector<Round> rounds_;
};

/// One round. Clicks from earlier rounds on the same slice are replayed
/// together with the new ones; the slice's stored mask is the prior.
inline const Round& run_round(Session& s, const Pipeline& pipe, std::vector<Click> clicks) {
  if (clicks.empty()) throw ValidationError("a round needs at least one click");
  const int k = clicks.front().slice_index;
  for (const auto& c : clicks)
    if (c.slice_index != k) throw ValidationError("all clicks in a round must lie on one slice");
  const Volume& vol = *s.volume_;
  vol.check_index(k);
  for (const auto& c : clicks)
    if (c.row < 0 || c.row >= vol.rows() || c.col < 0 || c.col >= vol.cols()) {
      throw ValidationError("click (" + std::to_string(c.row) + "," + std::to_string(c.col) + ") out of bounds");
    }

  Round r;
  r.number = static_cast<int>(s.rounds_.size()) + 1;
  r.clicks = clicks;
  r.prompt_index = k;

  std::vector<Click> all;
  for (const auto& prev : s.rounds_)
    if (prev.prompt_index == k) all.insert(all.end(), prev.clicks.begin(), prev.clicks.end());
  all.insert(all.end(), clicks.begin(), clicks.end());
  const MaskSequence* stored = s.current();
  r.prompt_mask = pipe.segment(vol, k, all, stored ? &(*stored)[k] : nullptr);
  r.prompt_mask.set_slice_index(k);
  r.raw = pipe.propagate(vol, k, r.prompt_mask);
  if (r.raw.size() != vol.slices()) throw StateError("propagation returned the wrong number of masks");

  if (stored && s.cfg_.fusion.enabled) {
    if (!pipe.score) throw StateError("fusion enabled but no quality scorer configured");
    r.scores = pipe.score(vol, *stored, r.raw);
    auto fr = fuse(*stored, r.raw, r.scores, s.cfg_.fusion.tau, k);
    r.fused = std::move(fr.fused);
    r.decisions = std::move(fr.decisions);
  } else {
    r.fused = r.raw;
    r.decisions.assign(vol.slices(), Choice::curr);
  }
  if (s.gt_) {
    r.slice_dice = per_slice_dice(r.fused, *s.gt_);
    r.mean_dice = mean_dice(r.fused, *s.gt_);
  }
  s.rounds_.push_back(std::move(r));
  return s.rounds_.back();
}

// ---------------------------------------------------------------------------
// Simulated user

/// Slice with the lowest Dice; ties go to the slice with more wrong pixels,
/// then to the lower index. Returns 0 when every slice is already exact.
inline int select_worst_slice(const MaskSequence* pred, const MaskSequence& gt) {
  int best = 0;
  double best_dice = 2.0;
  std::size_t best_err = 0;
  for (int i = 1; i <= gt.size(); ++i) {
    const BinaryMask empty(gt.rows(), gt.cols());
    const BinaryMask& p = pred ? (*pred)[i] : empty;
    if (p == gt[i]) continue;
    const double d = dice(p, gt[i]);
    std::size_t err = 0;
    for (std::size_t j = 0; j < p.size(); ++j) err += p.pixels()[j] != gt[i].pixels()[j];
    if (d < best_dice || (d == best_dice && err > best_err)) {
      best = i;
      best_dice = d;
      best_err = err;
    }
  }
  return best;
}

/// Clicks for the next round, or empty when the prediction is exact.
inline std::vector<Click> simulate_round_clicks(const Session& s, const Pipeline& pipe, int clicks_per_round) {
  if (!s.gt()) throw ParameterError("simulated user needs ground truth");
  const auto& gt = *s.gt();
  const int k = select_worst_slice(s.current(), gt);
  if (k == 0) return {};
  const BinaryMask empty(gt.rows(), gt.cols(), k);
  BinaryMask pred = s.current() ? (*s.current())[k] : empty;
  std::vector<Click> history;
  for (const auto& r : s.rounds())
    if (r.prompt_index == k) history.insert(history.end(), r.clicks.begin(), r.clicks.end());
  std::vector<Click> out;
  for (int n = 0; n < clicks_per_round; ++n) {
    auto c = simulate_next_click(pred, gt[k], k);
    if (!c) break;
    out.push_back(*c);
    if (n + 1 < clicks_per_round) {
      std::vector<Click> all = history;
      all.insert(all.end(), out.begin(), out.end());
      pred = pipe.segment(s.volume(), k, all, s.current() ? &(*s.current())[k] : nullptr);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Event log and replay

inline nlohmann::json click_to_json(const Click& c) {
  return {{"slice", c.slice_index}, {"row", c.row}, {"col", c.col},
          {"polarity", c.polarity == Polarity::positive ? "positive" : "negative"}};
}

inline Click click_from_json(const nlohmann::json& j) {
  try {
    const std::string pol = j.value("polarity", "positive");
    if (pol != "positive" && pol != "negative") throw ValidationError("polarity must be positive or negative");
    return {j.at("slice").get<int>(), j.at("row").get<int>(), j.at("col").get<int>(),
            pol == "positive" ? Polarity::positive : Polarity::negative};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed click: ") + e.what());
  }
}

inline std::string decisions_string(const std::vector<Choice>& d) {
  std::string s;
  for (auto c : d) s += c == Choice::prev ? 'p' : 'c';
  return s;
}

/// Append-only event log with an RLE snapshot of every stored sequence.
inline nlohmann::json session_log(const Session& s) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : s.rounds()) {
    nlohmann::json clicks = nlohmann::json::array();
    for (const auto& c : r.clicks) clicks.push_back(click_to_json(c));
    rounds.push_back({{"round", r.number},
                      {"clicks", clicks},
                      {"prompt_index", r.prompt_index},
                      {"decisions", decisions_string(r.decisions)},
                      {"snapshot", masks_to_json(r.fused)}});
  }
  return {{"version", 1},
          {"id", s.id()},
          {"volume_ref", s.volume_ref()},
          {"dims", {s.volume().slices(), s.volume().rows(), s.volume().cols()}},
          {"config", config_to_json(s.config())},
          {"events", rounds}};
}

struct ReplayResult {
  Session session;
  bool matches = true;
  int first_mismatch_round = 0;
};

/// Re-runs every logged round and compares stored sequences bit for bit.
inline ReplayResult replay_session(const nlohmann::json& log, std::shared_ptr<const Volume> volume,
                                   std::optional<MaskSequence> gt, const Pipeline& pipe) {
  ReplayResult out{Session(log.value("id", "replay"), std::move(volume), std::move(gt),
                           config_from_json(log.at("config")), log.value("volume_ref", "")),
                   true, 0};
  for (const auto& ev : log.at("events")) {
    std::vector<Click> clicks;
    for (const auto& c : ev.at("clicks")) clicks.push_back(click_from_json(c));
    const Round& r = run_round(out.session, pipe, clicks);
    if (out.matches && !(r.fused == masks_from_json(ev.at("snapshot")))) {
      out.matches = false;
      out.first_mismatch_round = r.number;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalCase {
  std::shared_ptr<const Volume> volume;  // normalized
  MaskSequence gt;
  std::string name;
};

struct EvalOptions {
  int rounds = 6;
  bool mrf = true;
  bool oracle_scores = false;
  int clicks_per_round = 1;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct VolumeTrace {
  std::string name;
  std::vector<double> mean_dice;  // per round
  std::vector<int> prompt_slices;
  std::vector<int> fused_from_prev;  // slices taken from the previous round
};

struct EvalReport {
  EvalOptions options;
  std::vector<double> mean_dice;  // per round, averaged over volumes
  std::vector<VolumeTrace> volumes;

  double final_dice() const { return mean_dice.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_dice.back(); }

  nlohmann::json to_json() const {
    nlohmann::json vols = nlohmann::json::array();
    for (const auto& v : volumes) {
      vols.push_back({{"name", v.name}, {"mean_dice", v.mean_dice}, {"prompt_slices", v.prompt_slices},
                      {"fused_from_prev", v.fused_from_prev}});
    }
    return {{"rounds", options.rounds}, {"mrf", options.mrf},   {"oracle_scores", options.oracle_scores},
            {"seed", options.seed},     {"mean_dice", mean_dice}, {"volumes", vols}};
  }
};

/// Runs the simulated user for `rounds` rounds on each case. Once a volume
/// is exact the remaining rounds repeat its Dice.
inline VolumeTrace simulate_volume(const EvalCase& c, const Pipeline& base, const EngineConfig& cfg_in,
                                   const EvalOptions& opt) {
  EngineConfig cfg = cfg_in;
  cfg.fusion.enabled = opt.mrf;
  const Pipeline pipe = opt.oracle_scores ? with_oracle_scores(base, c.gt) : base;
  Session s(c.name, c.volume, c.gt, cfg, c.name);
  VolumeTrace t{c.name, {}, {}, {}};
  for (int r = 1; r <= opt.rounds; ++r) {
    auto clicks = simulate_round_clicks(s, pipe, opt.clicks_per_round);
    if (clicks.empty()) {
      t.mean_dice.push_back(t.mean_dice.empty() ? 1.0 : t.mean_dice.back());
      t.prompt_slices.push_back(0);
      t.fused_from_prev.push_back(0);
      continue;
    }
    const Round& rd = run_round(s, pipe, std::move(clicks));
    t.mean_dice.push_back(rd.mean_dice);
    t.prompt_slices.push_back(rd.prompt_index);
    int n = 0;
    for (auto d : rd.decisions) n += d == Choice::prev;
    t.fused_from_prev.push_back(n);
  }
  return t;
}

inline EvalReport evaluate(const std::vector<EvalCase>& cases, const Pipeline& pipe, const EngineConfig& cfg,
                           const EvalOptions& opt) {
  if (opt.rounds < 0) throw ParameterError("rounds must be >= 0");
  for (const auto& c : cases)
    if (!c.volume || c.gt.size() == 0) throw ParameterError("evaluation case " + c.name + " lacks ground truth");
  EvalReport rep{opt, {}, std::vector<VolumeTrace>(cases.size())};
  if (opt.rounds == 0) return rep;
  const int threads = std::max(1, opt.threads);
  std::size_t next = 0;
  while (next < cases.size()) {
    std::vector<std::future<VolumeTrace>> jobs;
    const std::size_t batch_end = std::min(cases.size(), next + static_cast<std::size_t>(threads));
    for (std::size_t i = next; i < batch_end; ++i)
      jobs.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred,
                                [&, i] { return simulate_volume(cases[i], pipe, cfg, opt); }));
    for (std::size_t i = next; i < batch_end; ++i) rep.volumes[i] = jobs[i - next].get();
    next = batch_end;
  }
  rep.mean_dice.assign(opt.rounds, 0.0);
  for (const auto& v : rep.volumes)
    for (int r = 0; r < opt.rounds; ++r) rep.mean_dice[r] += v.mean_dice[r] / static_cast<double>(cases.size());
  return rep;
}

}  // namespace volseg
