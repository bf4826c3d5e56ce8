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

#include "trained_eval.hpp"

using namespace volseg;

namespace {

const ModelSet& zoo() {
  static const ModelSet m = load_all(testutil::zoo_dir());
  return m;
}

const std::vector<LabelledVolume>& probe() {
  static const auto d = trained::eval_suite(trained::kProbeVolumes);
  return d;
}

double tolerance() { return trained::baselines().at("tolerance").get<double>(); }

}  // namespace

TEST(Trained, CheckpointsRecordTrainingData) {
  const Recipe recipe;
  const auto data = normalize_suite(make_synth_suite(recipe.seed, recipe.train_volumes));
  CheckpointInfo info;
  load_interactor(testutil::zoo_dir() / "interactor.ckpt", &info);
  EXPECT_EQ(info.train_hash, dataset_hash(data));
  EXPECT_EQ(info.seed, recipe.seed + 1);
  load_propagator(testutil::zoo_dir() / "propagator.ckpt", &info);
  EXPECT_EQ(info.train_hash, dataset_hash(data));
}

TEST(Trained, InteractorOneClickDice) {
  const double got = trained::one_click_dice(*zoo().interactor, probe());
  const double want = trained::baselines().at("interactor_one_click_dice").get<double>();
  std::printf("one-click Dice %.4f (baseline %.4f)\n", got, want);
  EXPECT_GE(got, want - tolerance());
}

TEST(Trained, QualityNetSignAccuracy) {
  const auto pairs = trained::probe_pairs(zoo(), probe());
  ASSERT_GE(pairs.size(), 50u);
  const double got = quality_accuracy(*zoo().quality, pairs);
  const double want = trained::baselines().at("quality_sign_accuracy").get<double>();
  std::printf("quality sign accuracy %.4f on %zu pairs (baseline %.4f)\n", got, pairs.size(), want);
  EXPECT_GE(got, want - tolerance());
  EXPECT_GT(got, 0.5);
}

TEST(Trained, DiceDegradesWithDistanceFromPrompt) {
  const auto curve = trained::dice_by_distance(zoo(), probe());
  ASSERT_GE(curve.size(), 10u);
  // least-squares slope over distance bins
  double mx = 0, my = 0;
  for (const auto& [d, v] : curve) mx += d, my += v;
  mx /= curve.size();
  my /= curve.size();
  double sxy = 0, sxx = 0;
  for (const auto& [d, v] : curve) sxy += (d - mx) * (v - my), sxx += (d - mx) * (d - mx);
  const double slope = sxy / sxx;
  double near = 0, far = 0;
  int nn = 0, nf = 0;
  for (const auto& [d, v] : curve) {
    if (d >= 1 && d <= 3) near += v, ++nn;
    if (d >= 10) far += v, ++nf;
  }
  std::printf("Dice slope per slice %.5f, near %.4f, far %.4f\n", slope, near / nn, far / nf);
  EXPECT_LT(slope, 0.0);
  EXPECT_GT(near / nn, far / nf);
}

TEST(Trained, CorruptedPriorTrainingBeatsCleanPrior) {
  const Recipe recipe;
  const auto samples = slice_samples(normalize_suite(make_synth_suite(recipe.seed, recipe.train_volumes)));
  InteractorTrainConfig tc;
  tc.steps = 400;
  tc.seed = 31;
  tc.corrupt_prev = true;
  const auto with = train_interactor(samples, tc);
  tc.corrupt_prev = false;
  const auto without = train_interactor(samples, tc);
  const double a = trained::corrupted_refine_dice(with, probe(), 5);
  const double b = trained::corrupted_refine_dice(without, probe(), 5);
  std::printf("refinement Dice on corrupted priors: corrupted-trained %.4f, clean-trained %.4f\n", a, b);
  EXPECT_GT(a, b);
}
