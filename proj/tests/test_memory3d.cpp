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

#include <set>

#include "test_util.hpp"

using namespace volseg;
using testutil::random_tensor;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat loop_similarity(const Tensor<double>& k, const Tensor<double>& e, const Tensor<double>& q,
                    const Tensor<double>& s) {
  const int C = k.dim(0), M = k.dim(1), Q = q.dim(1);
  Mat out(M, std::vector<double>(Q));
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < Q; ++j) {
      double acc = 0;
      for (int c = 0; c < C; ++c) acc += e.at(c, i) * (k.at(c, i) - q.at(c, j)) * (k.at(c, i) - q.at(c, j));
      out[i][j] = -s[j] * acc;
    }
  return out;
}

Mat loop_softmax_over_memory(const Mat& s) {
  const std::size_t M = s.size(), Q = s[0].size();
  Mat out(M, std::vector<double>(Q));
  for (std::size_t j = 0; j < Q; ++j) {
    // long double exp without max-subtraction; inputs are kept moderate
    long double z = 0;
    for (std::size_t i = 0; i < M; ++i) z += std::exp(static_cast<long double>(s[i][j]));
    for (std::size_t i = 0; i < M; ++i) out[i][j] = static_cast<double>(std::exp(static_cast<long double>(s[i][j])) / z);
  }
  return out;
}

Mat loop_matmul(const Tensor<double>& v, const Mat& w) {
  const int Cv = v.dim(0), M = v.dim(1);
  const std::size_t Q = w[0].size();
  Mat out(Cv, std::vector<double>(Q, 0));
  for (int c = 0; c < Cv; ++c)
    for (std::size_t j = 0; j < Q; ++j)
      for (int i = 0; i < M; ++i) out[c][j] += v.at(c, i) * w[i][j];
  return out;
}

struct Instance {
  Tensor<double> k, e, q, s, v;
};

Instance random_instance(std::mt19937_64& rng) {
  const int C = 1 + static_cast<int>(rng() % 8), M = 1 + static_cast<int>(rng() % 20),
            Q = 1 + static_cast<int>(rng() % 20), Cv = 1 + static_cast<int>(rng() % 6);
  return {random_tensor<double>({C, M}, rng), random_tensor<double>({C, M}, rng, 0.01, 0.99),
          random_tensor<double>({C, Q}, rng), random_tensor<double>({Q}, rng, 1, 3),
          random_tensor<double>({Cv, M}, rng)};
}

FeatureKey<double> random_key(int C, int h, int w, std::mt19937_64& rng) {
  return {ag::constant(random_tensor<double>({C, h * w}, rng)),
          ag::constant(random_tensor<double>({h * w}, rng, 1, 2)),
          ag::constant(random_tensor<double>({C, h * w}, rng, 0.05, 0.95)), h, w};
}

FeatureValue<double> random_value(int Cv, int h, int w, std::mt19937_64& rng) {
  return {ag::constant(random_tensor<double>({Cv, h * w}, rng)), h, w};
}

}  // namespace

TEST(MemoryMath, SimilarityMatchesTripleLoop) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto in = random_instance(rng);
    const auto got = similarity(in.k, in.e, in.q, in.s);
    const auto want = loop_similarity(in.k, in.e, in.q, in.s);
    for (int i = 0; i < got.dim(0); ++i)
      for (int j = 0; j < got.dim(1); ++j) EXPECT_NEAR(got.at(i, j), want[i][j], 1e-5);
  }
}

TEST(MemoryMath, AffinityMatchesSoftmaxAndColumnsSumToOne) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const auto in = random_instance(rng);
    const auto s = similarity(in.k, in.e, in.q, in.s);
    const auto w = affinity(s);
    const auto want = loop_softmax_over_memory(loop_similarity(in.k, in.e, in.q, in.s));
    for (int j = 0; j < w.dim(1); ++j) {
      double col = 0;
      for (int i = 0; i < w.dim(0); ++i) {
        EXPECT_NEAR(w.at(i, j), want[i][j], 1e-5);
        col += w.at(i, j);
      }
      EXPECT_NEAR(col, 1.0, 1e-6);
    }
  }
}

TEST(MemoryMath, ReadoutMatchesLoop) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto in = random_instance(rng);
    const auto w = affinity(similarity(in.k, in.e, in.q, in.s));
    const auto got = readout(in.v, w);
    Mat wm(w.dim(0), std::vector<double>(w.dim(1)));
    for (int i = 0; i < w.dim(0); ++i)
      for (int j = 0; j < w.dim(1); ++j) wm[i][j] = w.at(i, j);
    const auto want = loop_matmul(in.v, wm);
    for (int c = 0; c < got.dim(0); ++c)
      for (int j = 0; j < got.dim(1); ++j) EXPECT_NEAR(got.at(c, j), want[c][j], 1e-5);
  }
}

TEST(MemoryMath, AffinityStableForLargeMagnitudes) {
  Tensor<double> s({3, 2});
  s.data = {-1e5, -2e5, -1e5 - 1, -3e5, -4e5, -2e5};
  const auto w = affinity(s);
  for (double x : w.data) EXPECT_TRUE(std::isfinite(x));
  EXPECT_NEAR(w.at(0, 0), 1 / (1 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(w.at(0, 1) + w.at(1, 1) + w.at(2, 1), 1.0, 1e-12);
}

TEST(MemoryMath, ShapeErrors) {
  std::mt19937_64 rng(4);
  const auto k = random_tensor<double>({3, 4}, rng), q = random_tensor<double>({2, 5}, rng);
  const auto s = random_tensor<double>({5}, rng);
  EXPECT_THROW(similarity(k, k, q, s), ValidationError);
  EXPECT_THROW(readout(random_tensor<double>({2, 3}, rng), random_tensor<double>({4, 5}, rng)), ValidationError);
}

TEST(MemoryMath, AutogradReadMatchesCentralDifferences) {
  std::mt19937_64 rng(5);
  nn::ParamSet<double> ps;
  auto k = ps.add("k", random_tensor<double>({3, 7}, rng));
  auto e = ps.add("e", random_tensor<double>({3, 7}, rng, 0.1, 0.9));
  auto q = ps.add("q", random_tensor<double>({3, 5}, rng));
  auto s = ps.add("s", random_tensor<double>({5}, rng, 1, 2));
  auto v = ps.add("v", random_tensor<double>({2, 7}, rng));
  Tensor<double> target({2, 5});
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = static_cast<double>(rng() % 2);
  const double err = testutil::gradient_check(
      ps, [&] { return ag::bce_with_logits(ag::matmul(v, ag::affinity(ag::similarity(k, e, q, s))), target); }, 8,
      rng);
  EXPECT_LT(err, 1e-6);
}

TEST(ReadMemory, EqualsMonolithicAttention) {
  std::mt19937_64 rng(6);
  const int C = 4, Cv = 3, h = 2, w = 3;
  WorkingMemory<double> wm(2, 4);
  LongTermMemory<double> ltm;
  ltm.keys = random_tensor<double>({C, 5}, rng);
  ltm.selection = random_tensor<double>({C, 5}, rng, 0.1, 0.9);
  ltm.values = random_tensor<double>({Cv, 5}, rng);
  ltm.usage.assign(5, 0.0);
  for (int f = 0; f < 3; ++f) wm = add_to_working(wm, random_key(C, h, w, rng), random_value(Cv, h, w, rng), f == 0, f);
  const auto q = random_key(C, h, w, rng);
  const auto got = read_memory(wm, ltm, q).value();

  // Stack [ltm | wm0 | wm1 | wm2] and attend once.
  const int M = 5 + 3 * h * w;
  Tensor<double> K({C, M}), E({C, M}), V({Cv, M});
  auto put = [&](const Tensor<double>& src, Tensor<double>& dst, int off) {
    for (int r = 0; r < src.dim(0); ++r)
      for (int c = 0; c < src.dim(1); ++c) dst.at(r, off + c) = src.at(r, c);
  };
  put(ltm.keys, K, 0);
  put(ltm.selection, E, 0);
  put(ltm.values, V, 0);
  for (int f = 0; f < 3; ++f) {
    const auto& en = wm.entries()[f];
    put(en.key.key.value(), K, 5 + f * h * w);
    put(en.key.selection.value(), E, 5 + f * h * w);
    put(en.value.value.value(), V, 5 + f * h * w);
  }
  const auto wmat = loop_softmax_over_memory(loop_similarity(K, E, q.key.value(), q.shrinkage.value()));
  const auto want = loop_matmul(V, wmat);
  for (int c = 0; c < Cv; ++c)
    for (int j = 0; j < h * w; ++j) EXPECT_NEAR(got.at(c, j), want[c][j], 1e-9);

  // Usage gains one unit of affinity mass per query position.
  double total = 0;
  for (double u : ltm.usage) total += u;
  for (const auto& en : wm.entries())
    for (double u : en.usage) total += u;
  EXPECT_NEAR(total, h * w, 1e-9);
}

TEST(ReadMemory, EmptyMemoryIsStateError) {
  std::mt19937_64 rng(7);
  WorkingMemory<double> wm;
  LongTermMemory<double> ltm;
  EXPECT_THROW(read_memory(wm, ltm, random_key(2, 1, 1, rng)), StateError);
}

TEST(Encoders, StrideRangesAndMaskSensitivity) {
  std::mt19937_64 rng(8);
  nn::ParamSet<float> ps;
  const MemoryConfig cfg;
  Encoders<float> enc(ps, cfg, rng);
  const auto slice = random_tensor<float>({64 * 48}, rng, 0, 1).data;
  const auto qf = encode_query(enc, slice, 64, 48);
  EXPECT_EQ(qf.key.h, 64 / kFeatureStride);
  EXPECT_EQ(qf.key.w, 48 / kFeatureStride);
  EXPECT_EQ(qf.key.key.dim(0), cfg.key_channels);
  for (float s : qf.key.shrinkage.value().data) EXPECT_GE(s, 1.f);
  for (float e : qf.key.selection.value().data) {
    EXPECT_GT(e, 0.f);
    EXPECT_LT(e, 1.f);
  }
  const auto empty = encode_value(enc, slice, BinaryMask(64, 48));
  const auto full = encode_value(enc, slice, testutil::rect(64, 48, 0, 0, 63, 47));
  EXPECT_EQ(empty.h, qf.key.h);
  EXPECT_EQ(empty.w, qf.key.w);
  EXPECT_NE(empty.value.value().data, full.value.value().data);
  EXPECT_THROW(encode_value(enc, slice, BinaryMask(64, 47)), ValidationError);
}

TEST(WorkingMemory, CapacityAndParameterErrors) {
  std::mt19937_64 rng(9);
  EXPECT_THROW(WorkingMemory<double>(5, 5), ParameterError);
  EXPECT_THROW(WorkingMemory<double>(0, 5), ParameterError);
  WorkingMemory<double> wm(1, 2);
  wm = add_to_working(wm, random_key(2, 1, 2, rng), random_value(2, 1, 2, rng), false, 1);
  EXPECT_THROW(consolidate(wm, LongTermMemory<double>{}, 4), StateError);
  wm = add_to_working(wm, random_key(2, 1, 2, rng), random_value(2, 1, 2, rng), false, 2);
  EXPECT_THROW(add_to_working(wm, random_key(2, 1, 2, rng), random_value(2, 1, 2, rng), false, 3), CapacityError);
  EXPECT_THROW(consolidate(wm, LongTermMemory<double>{}, 0), ParameterError);
  EXPECT_THROW(add_to_working(WorkingMemory<double>(1, 2), random_key(2, 1, 2, rng), random_value(2, 2, 2, rng), false, 1),
               ValidationError);
}

TEST(Consolidate, RetainsInteractionAndNewestFrames) {
  std::mt19937_64 rng(10);
  WorkingMemory<double> wm(5, 10);
  LongTermMemory<double> ltm;
  for (int f = 1; f <= 10; ++f)
    wm = add_to_working(wm, random_key(3, 2, 2, rng), random_value(2, 2, 2, rng), f == 1, f);
  ConsolidationReport rep;
  std::tie(wm, ltm) = consolidate(std::move(wm), std::move(ltm), 128, &rep);
  EXPECT_EQ(rep.retained, 5);
  EXPECT_EQ(rep.candidates, 5);
  EXPECT_EQ(rep.prototypes, 5 * 4);
  std::vector<int> frames;
  for (const auto& e : wm.entries()) frames.push_back(e.frame_index);
  EXPECT_EQ(frames, (std::vector<int>{1, 7, 8, 9, 10}));
  EXPECT_EQ(ltm.size(), 20);
}

TEST(Consolidate, BudgetPicksMostUsedPositions) {
  std::mt19937_64 rng(11);
  WorkingMemory<double> wm(1, 2);
  LongTermMemory<double> ltm;
  wm = add_to_working(wm, random_key(2, 1, 4, rng), random_value(2, 1, 4, rng), false, 1);
  wm = add_to_working(wm, random_key(2, 1, 4, rng), random_value(2, 1, 4, rng), false, 2);
  wm.entries()[0].usage = {0.1, 5.0, 0.2, 3.0};
  const auto key0 = wm.entries()[0].key.key.value();
  double vmax = 0;
  for (const auto& e : wm.entries())
    for (double x : e.value.value.value().data) vmax = std::max(vmax, std::abs(x));
  std::tie(wm, ltm) = consolidate(std::move(wm), std::move(ltm), 2);
  ASSERT_EQ(ltm.size(), 2);
  // positions 1 and 3, in original order
  for (int c = 0; c < 2; ++c) {
    EXPECT_EQ(ltm.keys.at(c, 0), key0.at(c, 1));
    EXPECT_EQ(ltm.keys.at(c, 1), key0.at(c, 3));
  }
  // prototype values are convex combinations of candidate values
  for (double x : ltm.values.data) EXPECT_LE(std::abs(x), vmax + 1e-12);
}

TEST(Consolidate, RandomSchedulesKeepInvariants) {
  std::mt19937_64 rng(12);
  for (int sched = 0; sched < 1000; ++sched) {
    const int budget = 1 + static_cast<int>(rng() % 12);
    WorkingMemory<double> wm(5, 10);
    LongTermMemory<double> ltm;
    std::set<int> interactions;
    const int steps = 10 + static_cast<int>(rng() % 40);
    for (int f = 1; f <= steps; ++f) {
      if (wm.full()) {
        const int before = ltm.size();
        const Tensor<double> prefix = ltm.keys;
        ConsolidationReport rep;
        std::tie(wm, ltm) = consolidate(std::move(wm), std::move(ltm), budget, &rep);
        ASSERT_LE(ltm.size() - before, budget);
        ASSERT_EQ(ltm.size() - before, rep.prototypes);
        for (int r = 0; before && r < prefix.dim(0); ++r)
          for (int c = 0; c < before; ++c) ASSERT_EQ(ltm.keys.at(r, c), prefix.at(r, c));
      }
      const bool inter = interactions.size() < 3 && rng() % 6 == 0;
      if (inter) interactions.insert(f);
      wm = add_to_working(wm, random_key(2, 1, 3, rng), random_value(2, 1, 3, rng), inter, f);
      ASSERT_LE(wm.size(), 10);
      std::set<int> present;
      for (const auto& e : wm.entries()) present.insert(e.frame_index);
      for (int i : interactions) ASSERT_TRUE(present.count(i)) << "interaction frame " << i << " evicted";
      if (rng() % 2) read_memory(wm, ltm, random_key(2, 1, 3, rng));
    }
  }
}
