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

struct Fixture {
  std::shared_ptr<const Volume> vol;
  MaskSequence gt;
};

Fixture make_fixture(int n = 6, int rows = 12, int cols = 12) {
  std::vector<float> vox(static_cast<std::size_t>(n) * rows * cols, 0.f);
  std::vector<BinaryMask> gts;
  for (int i = 1; i <= n; ++i) gts.push_back(testutil::disk(rows, cols, rows / 2.0, cols / 2.0, 1 + i % 4));
  return {std::make_shared<const Volume>(n, rows, cols, vox, Spacing{}, DType::float32, "fx"), MaskSequence(gts)};
}

// Records what the session hands to each stage.
struct Recorder {
  std::vector<std::vector<Click>> segment_clicks;
  std::vector<std::optional<BinaryMask>> priors;
  int score_calls = 0;
};

// segment: gt of the slice when any positive click exists; propagate: every
// slice gets the prompt mask; score: fixed P.
Pipeline stub_pipeline(const MaskSequence& gt, Recorder* rec, std::vector<double> P = {}) {
  Pipeline p;
  p.segment = [gt, rec](const Volume&, int k, std::span<const Click> clicks, const BinaryMask* prior) {
    if (rec) {
      rec->segment_clicks.emplace_back(clicks.begin(), clicks.end());
      rec->priors.push_back(prior ? std::optional<BinaryMask>(*prior) : std::nullopt);
    }
    bool pos = false;
    for (const auto& c : clicks) pos = pos || c.polarity == Polarity::positive;
    return pos ? gt[k] : BinaryMask(gt.rows(), gt.cols());
  };
  p.propagate = [](const Volume& v, int, const BinaryMask& m) {
    return MaskSequence(std::vector<BinaryMask>(v.slices(), m));
  };
  p.score = [P, rec](const Volume& v, const MaskSequence&, const MaskSequence&) {
    if (rec) ++rec->score_calls;
    return P.empty() ? std::vector<double>(v.slices(), 0.0) : P;
  };
  return p;
}

}  // namespace

TEST(Session, FirstRoundHasNoFusion) {
  auto fx = make_fixture();
  Recorder rec;
  Session s("s1", fx.vol, fx.gt, {});
  EXPECT_EQ(s.current(), nullptr);
  const Round& r = run_round(s, stub_pipeline(fx.gt, &rec), {{3, 6, 6, Polarity::positive}});
  EXPECT_EQ(r.number, 1);
  EXPECT_EQ(r.prompt_index, 3);
  EXPECT_EQ(r.prompt_mask, fx.gt[3]);
  EXPECT_EQ(r.fused, r.raw);
  EXPECT_EQ(r.decisions, std::vector<Choice>(6, Choice::curr));
  EXPECT_TRUE(r.scores.empty());
  EXPECT_EQ(rec.score_calls, 0);
  EXPECT_FALSE(rec.priors[0].has_value());
  EXPECT_DOUBLE_EQ(r.mean_dice, mean_dice(r.fused, fx.gt));
  EXPECT_EQ(r.slice_dice.size(), 6u);
  EXPECT_DOUBLE_EQ(r.slice_dice[2], 1.0);
  EXPECT_EQ(s.current(), &s.rounds().back().fused);
}

TEST(Session, LaterRoundsFuseAndAccumulateClicks) {
  auto fx = make_fixture();
  Recorder rec;
  const std::vector<double> P{0.9, 0.9, 0.1, 0.9, 0.2, 0.7};
  const auto pipe = stub_pipeline(fx.gt, &rec, P);
  Session s("s1", fx.vol, fx.gt, {});
  run_round(s, pipe, {{2, 6, 6, Polarity::positive}});
  const MaskSequence first = *s.current();
  run_round(s, pipe, {{4, 1, 1, Polarity::negative}});
  const Round& r = run_round(s, pipe, {{2, 0, 0, Polarity::negative}});
  EXPECT_EQ(rec.score_calls, 2);
  // The third round on slice 2 replays round 1's click first.
  ASSERT_EQ(rec.segment_clicks[2].size(), 2u);
  EXPECT_EQ(rec.segment_clicks[2][0], (Click{2, 6, 6, Polarity::positive}));
  EXPECT_EQ(rec.segment_clicks[2][1], (Click{2, 0, 0, Polarity::negative}));
  ASSERT_TRUE(rec.priors[2].has_value());
  EXPECT_EQ(*rec.priors[2], s.rounds()[1].fused[2]);
  EXPECT_EQ(decisions_string(r.decisions), "pccpcp");  // slice 2 is the prompt
  const MaskSequence& before = s.rounds()[1].fused;
  for (int i = 1; i <= 6; ++i) EXPECT_EQ(r.fused[i], r.decisions[i - 1] == Choice::prev ? before[i] : r.raw[i]);
  EXPECT_EQ(r.scores, P);
  EXPECT_NE(first, *s.current());
}

TEST(Session, FusionDisabledUsesRawOutput) {
  auto fx = make_fixture();
  Recorder rec;
  EngineConfig cfg;
  cfg.fusion.enabled = false;
  Session s("s1", fx.vol, fx.gt, cfg);
  const auto pipe = stub_pipeline(fx.gt, &rec, std::vector<double>(6, 1.0));
  run_round(s, pipe, {{2, 6, 6, Polarity::positive}});
  const Round& r = run_round(s, pipe, {{5, 6, 6, Polarity::positive}});
  EXPECT_EQ(rec.score_calls, 0);
  EXPECT_EQ(r.fused, r.raw);
}

TEST(Session, Errors) {
  auto fx = make_fixture();
  const auto pipe = stub_pipeline(fx.gt, nullptr);
  Session s("s1", fx.vol, fx.gt, {});
  EXPECT_THROW(run_round(s, pipe, {}), ValidationError);
  EXPECT_THROW(run_round(s, pipe, {{1, 0, 0}, {2, 0, 0}}), ValidationError);
  EXPECT_THROW(run_round(s, pipe, {{7, 0, 0}}), ValidationError);
  EXPECT_THROW(run_round(s, pipe, {{0, 0, 0}}), ValidationError);
  EXPECT_THROW(run_round(s, pipe, {{1, 12, 0}}), ValidationError);
  EXPECT_TRUE(s.rounds().empty());

  Pipeline short_prop = pipe;
  short_prop.propagate = [](const Volume&, int, const BinaryMask& m) { return MaskSequence({m}); };
  EXPECT_THROW(run_round(s, short_prop, {{1, 0, 0}}), StateError);

  Pipeline no_score = pipe;
  no_score.score = nullptr;
  run_round(s, no_score, {{1, 0, 0}});
  EXPECT_THROW(run_round(s, no_score, {{1, 0, 0}}), StateError);

  EXPECT_THROW(Session("x", nullptr, std::nullopt, {}), ValidationError);
  EXPECT_THROW(Session("x", fx.vol, MaskSequence::empty(5, 12, 12), {}), ValidationError);
  EngineConfig bad;
  bad.fusion.tau = 1.5;
  EXPECT_THROW(Session("x", fx.vol, fx.gt, bad), ParameterError);
}

TEST(SimulatedUser, WorstSliceSelection) {
  const BinaryMask a = testutil::rect(6, 6, 0, 0, 1, 1);  // 4 px
  const BinaryMask b = testutil::rect(6, 6, 0, 0, 3, 3);  // 16 px
  const MaskSequence gt({a, b, a});
  EXPECT_EQ(select_worst_slice(&gt, gt), 0);
  // Nothing predicted: every slice has Dice 0; slice 2 has most wrong pixels.
  EXPECT_EQ(select_worst_slice(nullptr, gt), 2);
  // Equal Dice and equal error counts: lowest index.
  const MaskSequence pred({BinaryMask(6, 6), b, BinaryMask(6, 6)});
  EXPECT_EQ(select_worst_slice(&pred, gt), 1);
  // Lowest Dice wins regardless of error count.
  const MaskSequence pred2({a, testutil::rect(6, 6, 0, 0, 3, 2), testutil::rect(6, 6, 0, 0, 1, 0)});
  EXPECT_EQ(select_worst_slice(&pred2, gt), 3);
}

TEST(SimulatedUser, ClicksTargetWorstSlice) {
  auto fx = make_fixture();
  const auto pipe = stub_pipeline(fx.gt, nullptr);
  Session s("s1", fx.vol, fx.gt, {});
  const auto clicks = simulate_round_clicks(s, pipe, 3);
  ASSERT_FALSE(clicks.empty());
  for (const auto& c : clicks) EXPECT_EQ(c.slice_index, clicks.front().slice_index);
  EXPECT_EQ(clicks.front().polarity, Polarity::positive);
  // The stub segments perfectly after one positive click, so the user stops.
  EXPECT_EQ(clicks.size(), 1u);
  Session no_gt("s2", fx.vol, std::nullopt, {});
  EXPECT_THROW(simulate_round_clicks(no_gt, pipe, 1), ParameterError);
}

TEST(SessionLog, ReplayIsBitExact) {
  auto fx = make_fixture(8);
  std::mt19937_64 rng(3);
  // Propagation with a deterministic per-call perturbation.
  Pipeline pipe = stub_pipeline(fx.gt, nullptr, {0.8, 0.3, 0.6, 0.1, 0.9, 0.4, 0.55, 0.2});
  pipe.propagate = [](const Volume& v, int k, const BinaryMask& m) {
    std::vector<BinaryMask> out;
    for (int i = 1; i <= v.slices(); ++i) out.push_back(i == k ? m : maskops::dilate(m, std::abs(i - k) % 3));
    return MaskSequence(out);
  };
  Session s("s1", fx.vol, fx.gt, {}, "fx");
  for (int r = 0; r < 4; ++r) {
    const int k = 1 + static_cast<int>(rng() % 8);
    run_round(s, pipe, {{k, static_cast<int>(rng() % 12), static_cast<int>(rng() % 12),
                         r % 2 ? Polarity::negative : Polarity::positive}});
  }
  const auto log = nlohmann::json::parse(session_log(s).dump());
  EXPECT_EQ(log.at("events").size(), 4u);
  EXPECT_EQ(log.at("volume_ref"), "fx");
  auto rep = replay_session(log, fx.vol, fx.gt, pipe);
  EXPECT_TRUE(rep.matches);
  ASSERT_EQ(rep.session.rounds().size(), 4u);
  for (int r = 0; r < 4; ++r) EXPECT_EQ(rep.session.rounds()[r].fused, s.rounds()[r].fused);

  auto tampered = log;
  auto seq = masks_from_json(tampered["events"][2]["snapshot"]);
  std::vector<BinaryMask> ms = seq.masks();
  ms[0].set(0, 0, !ms[0](0, 0));
  tampered["events"][2]["snapshot"] = masks_to_json(MaskSequence(ms));
  const auto bad = replay_session(tampered, fx.vol, fx.gt, pipe);
  EXPECT_FALSE(bad.matches);
  EXPECT_EQ(bad.first_mismatch_round, 3);
}

TEST(SessionLog, ClickJson) {
  const Click c{4, 2, 9, Polarity::negative};
  EXPECT_EQ(click_from_json(click_to_json(c)), c);
  EXPECT_THROW(click_from_json({{"slice", 1}, {"row", 2}}), ValidationError);
  EXPECT_THROW(click_from_json({{"slice", 1}, {"row", 2}, {"col", 3}, {"polarity", "maybe"}}), ValidationError);
}

TEST(Evaluate, ZeroRoundsAndErrors) {
  auto fx = make_fixture();
  const auto pipe = stub_pipeline(fx.gt, nullptr);
  const std::vector<EvalCase> cases{{fx.vol, fx.gt, "a"}};
  const auto rep = evaluate(cases, pipe, {}, {.rounds = 0});
  EXPECT_TRUE(rep.mean_dice.empty());
  EXPECT_TRUE(std::isnan(rep.final_dice()));
  EXPECT_THROW(evaluate(cases, pipe, {}, {.rounds = -1}), ParameterError);
  EXPECT_THROW(evaluate({{fx.vol, MaskSequence(std::vector<BinaryMask>{}), "b"}}, pipe, {}, {}), ParameterError);
}

TEST(Evaluate, PerfectStubsReachOneAndStay) {
  auto fx = make_fixture();
  Pipeline pipe = stub_pipeline(fx.gt, nullptr);
  const MaskSequence gt = fx.gt;
  pipe.propagate = [gt](const Volume&, int, const BinaryMask&) { return gt; };
  const std::vector<EvalCase> cases{{fx.vol, fx.gt, "a"}, {fx.vol, fx.gt, "b"}};
  const auto rep = evaluate(cases, pipe, {}, {.rounds = 4});
  EXPECT_EQ(rep.mean_dice, std::vector<double>(4, 1.0));
  EXPECT_EQ(rep.volumes[0].prompt_slices[1], 0);
  const auto j = rep.to_json();
  EXPECT_EQ(j.at("rounds"), 4);
  EXPECT_EQ(j.at("volumes").size(), 2u);
}

TEST(Evaluate, ThreadsDoNotChangeResults) {
  auto fx = make_fixture();
  Pipeline pipe = stub_pipeline(fx.gt, nullptr, std::vector<double>(6, 0.7));
  pipe.propagate = [](const Volume& v, int k, const BinaryMask& m) {
    std::vector<BinaryMask> out;
    for (int i = 1; i <= v.slices(); ++i) out.push_back(i == k ? m : maskops::erode(m, std::abs(i - k) % 2));
    return MaskSequence(out);
  };
  std::vector<EvalCase> cases;
  for (int i = 0; i < 5; ++i) cases.push_back({fx.vol, fx.gt, "c" + std::to_string(i)});
  const auto a = evaluate(cases, pipe, {}, {.rounds = 3, .threads = 1});
  const auto b = evaluate(cases, pipe, {}, {.rounds = 3, .threads = 3});
  EXPECT_EQ(a.mean_dice, b.mean_dice);
}

TEST(Evaluate, OracleScoresNeverLoseDice) {
  // Noisy propagation plus an exact interactor: with oracle scores every
  // non-prompt slice keeps the better of prev and curr, so the volume mean
  // cannot drop.
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    auto fx = make_fixture(5 + t % 6);
    Pipeline pipe = stub_pipeline(fx.gt, nullptr);
    auto seed = std::make_shared<std::uint64_t>(rng());
    const MaskSequence gt = fx.gt;
    pipe.segment = [gt](const Volume&, int k, std::span<const Click>, const BinaryMask*) { return gt[k]; };
    pipe.propagate = [gt, seed](const Volume& v, int k, const BinaryMask& m) {
      std::mt19937_64 r((*seed)++);
      std::vector<BinaryMask> out;
      for (int i = 1; i <= v.slices(); ++i) out.push_back(i == k ? m : corrupt_mask(gt[i], r, {}));
      return MaskSequence(out);
    };
    const auto rep = evaluate({{fx.vol, fx.gt, "o"}}, pipe, {}, {.rounds = 6, .oracle_scores = true});
    for (std::size_t r = 1; r < rep.mean_dice.size(); ++r) EXPECT_GE(rep.mean_dice[r], rep.mean_dice[r - 1]);
  }
}
