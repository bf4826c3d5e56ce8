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

#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"

using namespace volseg;

TEST(Config, DefaultsMatchDocumentedValues) {
  const EngineConfig c;
  EXPECT_EQ(c.memory.t_min, 5);
  EXPECT_EQ(c.memory.t_max, 10);
  EXPECT_EQ(c.memory.prototype_budget, 128);
  EXPECT_DOUBLE_EQ(c.fusion.tau, 0.5);
  EXPECT_EQ(c.corruption.probs, (std::array<double, 6>{0.1, 0.1, 0.3, 0.2, 0.1, 0.2}));
  EXPECT_EQ(c.corruption.dilation_iters.lo, 10);
  EXPECT_EQ(c.corruption.dilation_iters.hi, 30);
  EXPECT_EQ(c.corruption.erosion_iters, 10);
  EXPECT_EQ(c.corruption.boundary_displacement.lo, 10);
  EXPECT_EQ(c.corruption.boundary_displacement.hi, 30);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTrip) {
  EngineConfig c;
  c.memory.t_min = 3;
  c.memory.t_max = 7;
  c.fusion.tau = 0.65;
  c.fusion.enabled = false;
  c.corruption.probs = {0, 0.5, 0.5, 0, 0, 0};
  c.click_radius = 3;
  c.window_lo = -50;
  const EngineConfig d = config_from_json(nlohmann::json::parse(config_to_json(c).dump()));
  EXPECT_EQ(d.memory.t_min, 3);
  EXPECT_EQ(d.memory.t_max, 7);
  EXPECT_DOUBLE_EQ(d.fusion.tau, 0.65);
  EXPECT_FALSE(d.fusion.enabled);
  EXPECT_EQ(d.corruption.probs, c.corruption.probs);
  EXPECT_EQ(d.click_radius, 3);
  EXPECT_DOUBLE_EQ(d.window_lo, -50);
}

TEST(Config, PartialJsonKeepsDefaults) {
  const EngineConfig d = config_from_json({{"fusion", {{"tau", 0.4}}}, {"memory", {{"cadence", 2}}}});
  EXPECT_DOUBLE_EQ(d.fusion.tau, 0.4);
  EXPECT_EQ(d.fusion.batch, 8);
  EXPECT_EQ(d.memory.cadence, 2);
  EXPECT_EQ(d.memory.t_max, 10);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(config_from_json({{"fusion", {{"tau", 1.0}}}}), ParameterError);
  EXPECT_THROW(config_from_json({{"memory", {{"t_min", 10}}}}), ParameterError);
  EXPECT_THROW(config_from_json({{"corruption", {{"probabilities", {{"AddShapes", 1.0}, {"Melt", 0.0}}}}}}),
               ParameterError);
  EXPECT_THROW(config_from_json({{"corruption", {{"probabilities", {{"AddShapes", 0.7}}}}}}), ParameterError);
  EXPECT_THROW(config_from_json({{"window", {400, -100}}}), ParameterError);
  EXPECT_THROW(config_from_json({{"fusion", {{"tau", "high"}}}}), ParameterError);
  EXPECT_THROW(config_from_json({{"interactor", {{"click_radius", 0}}}}), ParameterError);
}

TEST(Config, LoadFromFile) {
  const auto dir = testutil::temp_dir("cfg");
  std::ofstream(dir / "c.json") << R"({"session": {"clicks_per_round": 2, "rounds": 4}})";
  const auto c = load_config(dir / "c.json");
  EXPECT_EQ(c.session.clicks_per_round, 2);
  EXPECT_EQ(c.session.rounds, 4);
  std::ofstream(dir / "bad.json") << "{";
  EXPECT_THROW(load_config(dir / "bad.json"), FormatError);
  EXPECT_THROW(load_config(dir / "none.json"), IoError);
}
