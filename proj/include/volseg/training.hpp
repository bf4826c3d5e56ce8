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

// Dataset plumbing and the default training recipe for all three models.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "volseg/checkpoint.hpp"
#include "volseg/session.hpp"
#include "volseg/synth.hpp"

namespace volseg {

struct LabelledVolume {
  Volume volume;  // normalized
  MaskSequence gt;
};

inline std::vector<LabelledVolume> normalize_suite(const std::vector<SynthCase>& suite, const EngineConfig& cfg = {}) {
  std::vector<LabelledVolume> out;
  out.reserve(suite.size());
  for (const auto& c : suite) out.push_back({normalize_intensity(c.volume, cfg.window_lo, cfg.window_hi), c.gt});
  return out;
}

inline std::vector<Sample2D> slice_samples(const std::vector<LabelledVolume>& data) {
  std::vector<Sample2D> out;
  for (const auto& d : data)
    for (int i = 1; i <= d.volume.slices(); ++i)
      out.push_back({std::vector<float>(d.volume.slice(i).begin(), d.volume.slice(i).end()), d.gt[i]});
  return out;
}

inline std::vector<TrainVolume> train_volumes(const std::vector<LabelledVolume>& data) {
  std::vector<TrainVolume> out;
  for (const auto& d : data) out.push_back({d.volume, d.gt});
  return out;
}

inline std::vector<EvalCase> eval_cases(const std::vector<LabelledVolume>& data) {
  std::vector<EvalCase> out;
  for (const auto& d : data) out.push_back({std::make_shared<const Volume>(d.volume), d.gt, d.volume.id()});
  return out;
}

/// FNV-1a over voxels and ground-truth pixels, in order.
inline std::uint64_t dataset_hash(const std::vector<LabelledVolume>& data) {
  nn::Fnv1a h;
  for (const auto& d : data) {
    h.update_values(d.volume.voxels());
    for (const auto& m : d.gt.masks()) h.update_values(m.pixels());
  }
  return h.digest();
}

inline std::uint64_t defect_hash(const std::vector<DefectPair>& pairs) {
  nn::Fnv1a h;
  for (const auto& p : pairs) {
    h.update_values(p.slice);
    h.update_values(p.mask_a.pixels());
    h.update_values(p.mask_b.pixels());
    h.update(&p.label, sizeof p.label);
  }
  return h.digest();
}

/// Baseline predictions for the defect dataset: one simulated round.
inline BaselinePredictor one_round_baseline(const Interactor<float>& interactor,
                                            const PropagationModel<float>& propagator, const EngineConfig& cfg) {
  return [&interactor, &propagator, cfg](const Volume& v, const MaskSequence& gt, std::uint64_t) {
    const Pipeline pipe = make_pipeline(interactor, propagator, nullptr);
    Session s("baseline", std::make_shared<const Volume>(v), gt, cfg);
    auto clicks = simulate_round_clicks(s, pipe, cfg.session.clicks_per_round);
    if (clicks.empty()) return gt;
    return run_round(s, pipe, std::move(clicks)).fused;
  };
}

// ---------------------------------------------------------------------------
// Defect dataset on disk: slices/NNNNN/{header.json, voxels.raw} (float32,
// one slice each) plus pairs.json.

inline void save_defect_dataset(const std::vector<DefectPair>& pairs, const fs::path& dir) {
  fs::create_directories(dir / "slices");
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& p = pairs[k];
    char name[32];
    std::snprintf(name, sizeof name, "%05zu", k);
    save_volume(Volume(1, p.mask_a.rows(), p.mask_a.cols(), p.slice, {}, DType::float32, name), dir / "slices" / name);
    items.push_back({{"slice", std::string("slices/") + name},
                     {"mask_a", rle_encode(p.mask_a)},
                     {"mask_b", rle_encode(p.mask_b)},
                     {"label", p.label},
                     {"dice_a", p.dice_a},
                     {"dice_b", p.dice_b},
                     {"volume", p.volume},
                     {"slice_index", p.slice_index}});
  }
  const int rows = pairs.empty() ? 0 : pairs.front().mask_a.rows();
  const int cols = pairs.empty() ? 0 : pairs.front().mask_a.cols();
  io_detail::write_file(dir / "pairs.json", nlohmann::json{{"rows", rows}, {"cols", cols}, {"pairs", items}}.dump());
}

inline std::vector<DefectPair> load_defect_dataset(const fs::path& dir) {
  const auto j = io_detail::parse_json(io_detail::read_file(dir / "pairs.json"), "pairs.json");
  std::vector<DefectPair> out;
  try {
    const int rows = j.at("rows").get<int>(), cols = j.at("cols").get<int>();
    for (const auto& it : j.at("pairs")) {
      DefectPair p;
      const Volume v = load_volume(dir / it.at("slice").get<std::string>());
      if (v.slices() != 1 || v.rows() != rows || v.cols() != cols) throw FormatError("pairs.json: slice shape mismatch");
      p.slice = v.voxels();
      p.mask_a = rle_decode(it.at("mask_a").get<std::vector<std::uint32_t>>(), rows, cols);
      p.mask_b = rle_decode(it.at("mask_b").get<std::vector<std::uint32_t>>(), rows, cols);
      p.label = it.at("label").get<int>();
      p.dice_a = it.value("dice_a", 0.0);
      p.dice_b = it.value("dice_b", 0.0);
      p.volume = it.value("volume", 0);
      p.slice_index = it.value("slice_index", 1);
      out.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed pairs.json: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Default recipe

struct Recipe {
  std::uint64_t seed = 100;
  int train_volumes = 16;
  int interactor_steps = 1200;
  int propagator_steps = 600;
  int quality_steps = 800;
};

struct ModelSet {
  std::unique_ptr<Interactor<float>> interactor;
  std::unique_ptr<PropagationModel<float>> propagator;
  std::unique_ptr<QualityNet<float>> quality;
};

/// Trains all three models on the synthetic suite drawn with `recipe.seed`
/// and writes interactor.ckpt, propagator.ckpt, quality.ckpt to `out`.
inline ModelSet train_all(const Recipe& recipe, const EngineConfig& cfg, const fs::path& out,
                          std::FILE* progress = nullptr) {
  auto say = [&](const char* what) {
    if (progress) std::fprintf(progress, "%s\n", what), std::fflush(progress);
  };
  const auto data = normalize_suite(make_synth_suite(recipe.seed, recipe.train_volumes), cfg);
  const auto hash = dataset_hash(data);
  ModelSet m;

  say("training interactor");
  InteractorTrainConfig itc;
  itc.steps = recipe.interactor_steps;
  itc.seed = recipe.seed + 1;
  itc.corruption = cfg.corruption;
  InteractorConfig iarch;
  iarch.click_radius = cfg.click_radius;
  iarch.threshold = cfg.interactor_threshold;
  m.interactor = std::make_unique<Interactor<float>>(train_interactor(slice_samples(data), itc, iarch));
  save_interactor(out / "interactor.ckpt", *m.interactor, itc.seed, hash);

  say("training propagator");
  PropagatorTrainConfig ptc;
  ptc.steps = recipe.propagator_steps;
  ptc.seed = recipe.seed + 2;
  m.propagator = std::make_unique<PropagationModel<float>>(train_propagator(train_volumes(data), ptc, cfg.memory));
  save_propagator(out / "propagator.ckpt", *m.propagator, ptc.seed, hash);

  say("building defect dataset");
  std::vector<Volume> vols;
  std::vector<MaskSequence> gts;
  for (const auto& d : data) {
    vols.push_back(d.volume);
    gts.push_back(d.gt);
  }
  DefectDatasetConfig dcfg;
  dcfg.seed = recipe.seed + 3;
  dcfg.corruption = cfg.corruption;
  const auto pairs = build_defect_dataset(vols, gts, one_round_baseline(*m.interactor, *m.propagator, cfg), dcfg);

  say("training quality net");
  QualityTrainConfig qtc;
  qtc.steps = recipe.quality_steps;
  qtc.seed = recipe.seed + 4;
  QualityNetConfig qarch;
  qarch.tau = cfg.fusion.tau;
  qarch.batch = cfg.fusion.batch;
  m.quality = std::make_unique<QualityNet<float>>(train_quality_net(pairs, qtc, qarch));
  save_quality(out / "quality.ckpt", *m.quality, qtc.seed, defect_hash(pairs));
  return m;
}

inline ModelSet load_all(const fs::path& dir) {
  ModelSet m;
  m.interactor = std::make_unique<Interactor<float>>(load_interactor(dir / "interactor.ckpt"));
  m.propagator = std::make_unique<PropagationModel<float>>(load_propagator(dir / "propagator.ckpt"));
  m.quality = std::make_unique<QualityNet<float>>(load_quality(dir / "quality.ckpt"));
  return m;
}

}  // namespace volseg
