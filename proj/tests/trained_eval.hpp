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

// Measurements on the trained zoo shared by test_trained and the acceptance
// runner. Calibrated values live in tests/baselines.json.

#include <cmath>
#include <map>

#include "test_util.hpp"

namespace trained {

using namespace volseg;

// Held-out suite; the zoo trains on seed 100.
inline constexpr std::uint64_t kEvalSeed = 2026;
inline constexpr int kEvalVolumes = 32;
inline constexpr int kProbeVolumes = 4;

inline nlohmann::json baselines() {
  return nlohmann::json::parse(io_detail::read_file(testutil::source_dir() / "tests" / "baselines.json"));
}

inline std::vector<LabelledVolume> eval_suite(int count = kEvalVolumes) {
  return normalize_suite(make_synth_suite(kEvalSeed, count));
}

/// Mean Dice of one interactor pass with one simulated click on an empty
/// prior, over every slice that holds the object.
inline double one_click_dice(const Interactor<float>& net, const std::vector<LabelledVolume>& data) {
  double sum = 0;
  int n = 0;
  for (const auto& d : data)
    for (int i = 1; i <= d.volume.slices(); ++i) {
      const BinaryMask& gt = d.gt[i];
      if (gt.empty()) continue;
      const auto c = simulate_next_click(BinaryMask(gt.rows(), gt.cols()), gt, i);
      const std::vector<Click> clicks{*c};
      sum += dice(segment_slice(net, d.volume.slice(i), gt.rows(), gt.cols(), clicks, nullptr).mask, gt);
      ++n;
    }
  return sum / n;
}

/// Mean Dice after one click on a corrupted prior, over object slices.
inline double corrupted_refine_dice(const Interactor<float>& net, const std::vector<LabelledVolume>& data,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const CorruptionSpec spec;
  double sum = 0;
  int n = 0;
  for (const auto& d : data)
    for (int i = 1; i <= d.volume.slices(); ++i) {
      const BinaryMask& gt = d.gt[i];
      if (gt.empty()) continue;
      const BinaryMask prev = corrupt_mask(gt, rng, spec);
      const auto c = simulate_next_click(prev, gt, i);
      if (!c) continue;
      const std::vector<Click> clicks{*c};
      sum += dice(segment_slice(net, d.volume.slice(i), gt.rows(), gt.cols(), clicks, &prev).mask, gt);
      ++n;
    }
  return sum / n;
}

/// Held-out defect pairs whose two candidates differ by at least 0.1 Dice.
inline std::vector<DefectPair> probe_pairs(const ModelSet& zoo, const std::vector<LabelledVolume>& data) {
  std::vector<Volume> vols;
  std::vector<MaskSequence> gts;
  for (const auto& d : data) {
    vols.push_back(d.volume);
    gts.push_back(d.gt);
  }
  DefectDatasetConfig cfg;
  cfg.seed = kEvalSeed + 3;
  cfg.pairs_per_slice = 2;
  auto pairs = build_defect_dataset(vols, gts, one_round_baseline(*zoo.interactor, *zoo.propagator, EngineConfig{}), cfg);
  std::erase_if(pairs, [](const DefectPair& p) { return std::abs(p.dice_a - p.dice_b) < 0.1; });
  return pairs;
}

/// Mean per-slice Dice of one round, keyed by distance from the prompt slice.
inline std::map<int, double> dice_by_distance(const ModelSet& zoo, const std::vector<LabelledVolume>& data) {
  const Pipeline pipe = make_pipeline(*zoo.interactor, *zoo.propagator, nullptr);
  std::map<int, std::pair<double, int>> acc;
  for (const auto& d : data) {
    Session s(d.volume.id(), std::make_shared<const Volume>(d.volume), d.gt, EngineConfig{});
    auto clicks = simulate_round_clicks(s, pipe, 1);
    const Round& r = run_round(s, pipe, std::move(clicks));
    for (int i = 1; i <= d.volume.slices(); ++i) {
      if (d.gt[i].empty()) continue;
      auto& [sum, n] = acc[std::abs(i - r.prompt_index)];
      sum += r.slice_dice[i - 1];
      ++n;
    }
  }
  std::map<int, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / v.second;
  return out;
}

inline EvalReport run_eval(const ModelSet& zoo, const std::vector<LabelledVolume>& data, bool mrf) {
  const EngineConfig cfg;
  const Pipeline pipe = make_pipeline(*zoo.interactor, *zoo.propagator, zoo.quality.get(), cfg.fusion.batch, true);
  EvalOptions opt;
  opt.rounds = 6;
  opt.mrf = mrf;
  opt.seed = kEvalSeed;
  return evaluate(eval_cases(data), pipe, cfg, opt);
}

}  // namespace trained
