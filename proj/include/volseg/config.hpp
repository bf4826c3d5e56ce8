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

// Engine configuration file (JSON). Every section and key is optional;
// missing keys keep their defaults.
//
// {
//   "memory":     {"t_min": 5, "t_max": 10, "cadence": 5, "prototype_budget": 128, ...},
//   "interactor": {"click_radius": 5, "threshold": 0.5},
//   "fusion":     {"tau": 0.5, "batch": 8, "enabled": true},
//   "corruption": {"probabilities": {"AddShapes": 0.1, ...}, "dilation_iters": [10, 30],
//                  "erosion_iters": 10, "boundary_displacement": [10, 30]},
//   "session":    {"clicks_per_round": 1, "rounds": 6},
//   "window":     [-100, 400]
// }

#include <string>

#include "json.hpp"
#include "volseg/corruptor.hpp"
#include "volseg/memory3d.hpp"
#include "volseg/volume_io.hpp"

namespace volseg {

struct FusionConfig {
  double tau = 0.5;
  int batch = 8;
  bool enabled = true;
};

struct SessionConfig {
  int clicks_per_round = 1;
  int rounds = 6;
};

struct EngineConfig {
  MemoryConfig memory{};
  int click_radius = 5;
  double interactor_threshold = 0.5;
  FusionConfig fusion{};
  CorruptionSpec corruption{};
  SessionConfig session{};
  double window_lo = -100, window_hi = 400;

  void validate() const {
    memory.validate();
    corruption.validate();
    if (click_radius < 1) throw ParameterError("click_radius must be >= 1");
    if (!(fusion.tau > 0 && fusion.tau < 1)) throw ParameterError("fusion.tau must lie in (0, 1)");
    if (fusion.batch < 1) throw ParameterError("fusion.batch must be >= 1");
    if (session.clicks_per_round < 1 || session.rounds < 0) throw ParameterError("invalid session settings");
    if (!(window_lo < window_hi)) throw ParameterError("window must satisfy lo < hi");
  }
};

inline nlohmann::json corruption_to_json(const CorruptionSpec& c) {
  nlohmann::json probs = nlohmann::json::object();
  for (std::size_t k = 0; k < c.probs.size(); ++k) probs[kTransformNames[k]] = c.probs[k];
  return {{"probabilities", probs},
          {"dilation_iters", {c.dilation_iters.lo, c.dilation_iters.hi}},
          {"erosion_iters", c.erosion_iters},
          {"boundary_displacement", {c.boundary_displacement.lo, c.boundary_displacement.hi}}};
}

inline CorruptionSpec corruption_from_json(const nlohmann::json& j) {
  CorruptionSpec c;
  if (j.contains("probabilities")) {
    const auto& p = j.at("probabilities");
    for (auto it = p.begin(); it != p.end(); ++it) {
      std::size_t k = 0;
      while (k < kTransformNames.size() && it.key() != kTransformNames[k]) ++k;
      if (k == kTransformNames.size()) throw ParameterError("unknown transformation " + it.key());
    }
    for (std::size_t k = 0; k < c.probs.size(); ++k) c.probs[k] = p.value(kTransformNames[k], 0.0);
  }
  if (j.contains("dilation_iters")) c.dilation_iters = {j["dilation_iters"][0].get<int>(), j["dilation_iters"][1].get<int>()};
  c.erosion_iters = j.value("erosion_iters", c.erosion_iters);
  if (j.contains("boundary_displacement")) {
    c.boundary_displacement = {j["boundary_displacement"][0].get<int>(), j["boundary_displacement"][1].get<int>()};
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const EngineConfig& c) {
  return {{"memory", c.memory.to_json()},
          {"interactor", {{"click_radius", c.click_radius}, {"threshold", c.interactor_threshold}}},
          {"fusion", {{"tau", c.fusion.tau}, {"batch", c.fusion.batch}, {"enabled", c.fusion.enabled}}},
          {"corruption", corruption_to_json(c.corruption)},
          {"session", {{"clicks_per_round", c.session.clicks_per_round}, {"rounds", c.session.rounds}}},
          {"window", {c.window_lo, c.window_hi}}};
}

inline EngineConfig config_from_json(const nlohmann::json& j) {
  EngineConfig c;
  try {
    if (j.contains("memory")) {
      nlohmann::json m = c.memory.to_json();
      m.update(j["memory"]);
      c.memory = MemoryConfig::from_json(m);
    }
    if (j.contains("interactor")) {
      c.click_radius = j["interactor"].value("click_radius", c.click_radius);
      c.interactor_threshold = j["interactor"].value("threshold", c.interactor_threshold);
    }
    if (j.contains("fusion")) {
      c.fusion.tau = j["fusion"].value("tau", c.fusion.tau);
      c.fusion.batch = j["fusion"].value("batch", c.fusion.batch);
      c.fusion.enabled = j["fusion"].value("enabled", c.fusion.enabled);
    }
    if (j.contains("corruption")) c.corruption = corruption_from_json(j["corruption"]);
    if (j.contains("session")) {
      c.session.clicks_per_round = j["session"].value("clicks_per_round", c.session.clicks_per_round);
      c.session.rounds = j["session"].value("rounds", c.session.rounds);
    }
    if (j.contains("window")) {
      c.window_lo = j["window"][0].get<double>();
      c.window_hi = j["window"][1].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

inline EngineConfig load_config(const fs::path& path) {
  return config_from_json(io_detail::parse_json(io_detail::read_file(path), "config " + path.string()));
}

}  // namespace volseg
