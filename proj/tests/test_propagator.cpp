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

#include "test_util.hpp"

using namespace volseg;

namespace {

Volume noise_volume(int n, int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<float> vox(static_cast<std::size_t>(n) * rows * cols);
  for (auto& v : vox) v = u(rng);
  return Volume(n, rows, cols, vox, {}, DType::float32, "noise");
}

const PropagationModel<float>& small_model() {
  static const PropagationModel<float> m({.key_channels = 4, .value_channels = 4, .hidden_channels = 2}, 17);
  return m;
}

}  // namespace

TEST(PropagationPlan, DirectionsCoverEverySliceButPrompt) {
  for (int n = 1; n <= 12; ++n)
    for (int p = 1; p <= n; ++p) {
      const auto plan = PropagationPlan::make(n, p);
      std::vector<int> seen(n + 1, 0);
      ++seen[p];
      for (int i : plan.forward) ++seen[i];
      for (int i : plan.backward) ++seen[i];
      for (int i = 1; i <= n; ++i) EXPECT_EQ(seen[i], 1);
      EXPECT_TRUE(std::is_sorted(plan.forward.begin(), plan.forward.end()));
      EXPECT_TRUE(std::is_sorted(plan.backward.rbegin(), plan.backward.rend()));
    }
  EXPECT_TRUE(PropagationPlan::make(1, 1).forward.empty());
  EXPECT_TRUE(PropagationPlan::make(1, 1).backward.empty());
  EXPECT_THROW(PropagationPlan::make(5, 0), ValidationError);
  EXPECT_THROW(PropagationPlan::make(5, 6), ValidationError);
}

TEST(Propagate, SingleSliceReturnsPromptOnly) {
  const Volume v = noise_volume(1, 32, 32, 1);
  const BinaryMask m = testutil::disk(32, 32, 16, 16, 5);
  const auto out = propagate(v, 1, m, small_model());
  ASSERT_EQ(out.size(), 1);
  EXPECT_EQ(out[1], m);
}

TEST(Propagate, CoverageAndPromptPreservedForRandomPlans) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 12; ++t) {
    const int n = 1 + static_cast<int>(rng() % 20);
    const int p = t == 0 ? 1 : t == 1 ? n : 1 + static_cast<int>(rng() % n);
    const Volume v = noise_volume(n, 32, 48, t);
    const BinaryMask m = testutil::random_mask(32, 48, 0.3, rng);
    const auto out = propagate(v, p, m, small_model());
    ASSERT_EQ(out.size(), n);
    EXPECT_EQ(out[p].pixels(), m.pixels());
    for (int i = 1; i <= n; ++i) {
      EXPECT_EQ(out[i].slice_index(), i);
      EXPECT_EQ(out[i].rows(), 32);
      EXPECT_EQ(out[i].cols(), 48);
    }
  }
}

TEST(Propagate, DeterministicAndParallelMatchesSequential) {
  const Volume v = noise_volume(13, 32, 32, 3);
  const BinaryMask m = testutil::disk(32, 32, 12, 18, 7);
  const auto a = propagate(v, 6, m, small_model());
  const auto b = propagate(v, 6, m, small_model());
  const auto c = propagate(v, 6, m, small_model(), {.parallel = true, .hook = {}});
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Propagate, DirectionsUseIndependentMemories) {
  // Slices on one side of the prompt do not depend on the other side.
  const BinaryMask m = testutil::disk(32, 32, 16, 16, 6);
  Volume v1 = noise_volume(9, 32, 32, 4);
  std::vector<float> vox(v1.voxels().begin(), v1.voxels().end());
  for (int i = 0; i < 3 * 32 * 32; ++i) vox[i] = 1.0f - vox[i];  // rewrite slices 1..3
  const Volume v2(9, 32, 32, vox, {}, DType::float32, "noise2");
  const auto a = propagate(v1, 5, m, small_model()), b = propagate(v2, 5, m, small_model());
  for (int i = 5; i <= 9; ++i) EXPECT_EQ(a[i], b[i]) << i;
}

TEST(Propagate, Errors) {
  const Volume v = noise_volume(4, 32, 32, 5);
  EXPECT_THROW(propagate(v, 0, BinaryMask(32, 32), small_model()), ValidationError);
  EXPECT_THROW(propagate(v, 5, BinaryMask(32, 32), small_model()), ValidationError);
  EXPECT_THROW(propagate(v, 2, BinaryMask(32, 31), small_model()), ValidationError);
}

TEST(Propagate, MemoryHookInvariants) {
  const MemoryConfig cfg{.key_channels = 4, .value_channels = 4, .hidden_channels = 2, .t_min = 2, .t_max = 4,
                         .prototype_budget = 3, .cadence = 1};
  const PropagationModel<float> model(cfg, 5);
  const Volume v = noise_volume(30, 32, 32, 6);
  std::vector<MemoryEvent> events;
  propagate(v, 11, testutil::disk(32, 32, 16, 16, 6), model, {.hook = [&](const MemoryEvent& e) { events.push_back(e); }});
  ASSERT_EQ(events.size(), 29u);
  int consolidations = 0;
  std::map<int, int> last_ltm{{+1, 0}, {-1, 0}};
  for (const auto& e : events) {
    EXPECT_LE(e.working_size, cfg.t_max);
    EXPECT_GE(e.working_size, 1);
    EXPECT_EQ(e.interaction_entries, 1);
    EXPECT_LE(e.prototypes_added, cfg.prototype_budget);
    EXPECT_EQ(e.long_term_size - last_ltm[e.direction], e.prototypes_added);
    last_ltm[e.direction] = e.long_term_size;
    consolidations += e.consolidated;
    EXPECT_TRUE(e.direction == 1 ? e.frame > 11 : e.frame < 11);
  }
  EXPECT_GT(consolidations, 0);
}

TEST(Decoder, OutputShapeAndGridMismatch) {
  const auto& model = small_model();
  const Volume v = noise_volume(2, 48, 32, 7);
  const auto q = encode_query(model.encoders(), v.slice(1), 48, 32);
  const auto val = encode_value(model.encoders(), v.slice(1), BinaryMask(48, 32));
  const auto s = model.encoders().initial_sensory(q.key.h, q.key.w);
  const auto out = model.decoder()(val.value, s, q, 48, 32);
  EXPECT_EQ(out.logits.value().shape, (Shape{1, 1, 48, 32}));
  EXPECT_EQ(out.features.dim(1), 32);
  const auto q2 = encode_query(model.encoders(), noise_volume(1, 64, 64, 8).slice(1), 64, 64);
  EXPECT_THROW(model.decoder()(val.value, s, q2, 64, 64), ValidationError);
  const auto r = decode(model.decoder(), val.value, s, q, 48, 32);
  for (std::size_t i = 0; i < r.prob.size(); ++i) EXPECT_EQ(r.mask.pixels()[i], r.prob[i] >= 0.5f ? 1 : 0);
}

TEST(TrainPropagator, SmokeDeterministicAndClipsInRange) {
  auto suite = make_synth_suite(9, 2, {.rows = 32, .cols = 32, .min_slices = 8, .max_slices = 10});
  std::vector<TrainVolume> data;
  for (auto& c : suite) data.push_back({normalize_intensity(c.volume), c.gt});
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto frames = sample_clip(data[0].gt, 4, 3, rng);
    ASSERT_EQ(frames.size(), 4u);
    for (int f : frames) {
      EXPECT_GE(f, 1);
      EXPECT_LE(f, data[0].gt.size());
    }
  }
  PropagatorTrainConfig tc;
  tc.steps = 6;
  std::vector<double> la, lb;
  const MemoryConfig arch{.key_channels = 4, .value_channels = 4, .hidden_channels = 2};
  train_propagator(data, tc, arch, &la);
  train_propagator(data, tc, arch, &lb);
  ASSERT_EQ(la.size(), 6u);
  EXPECT_EQ(la, lb);
  for (double l : la) EXPECT_TRUE(std::isfinite(l));
  EXPECT_THROW(train_propagator({}, tc), ParameterError);
}
