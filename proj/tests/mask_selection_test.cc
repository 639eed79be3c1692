// Copyright 2026 The dpsparse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <limits>

#include "dpsparse/dp_engine.h"
#include "dpsparse/kernels.h"
#include "dpsparse/mask_selection.h"
#include "gtest/gtest.h"
#include "oracles.h"
#include "test_util.h"

namespace dpsparse {
namespace {

using testing::MakeModel;
using testing::MlpSpec;
using testing::RandomBatch;
using testing::RandomParams;

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Fixture {
  Model model = MakeModel(MlpSpec(6, {8, 5}, 3));
  ParamVector params = RandomParams(model, 1);
  Dataset data = testing::RandomDataset(120, 6, 3, 2);
  std::shared_ptr<const ParamLayout> layout = model.layout();
  std::shared_ptr<const Grouping> rows =
      std::make_shared<const Grouping>(Grouping::Rows(*layout));
  std::shared_ptr<const Grouping> singletons =
      std::make_shared<const Grouping>(Grouping::Singleton(*layout));
};

DpSgdConfig ScoringConfig(double sigma, double clip) {
  DpSgdConfig c;
  c.noise_multiplier = sigma;
  c.clip = clip;
  c.sample_rate = 0.1;
  return c;
}

// Runs a selector over one epoch with fresh sampler and noise streams.
template <typename Fn>
absl::StatusOr<Mask> Select(const Fixture& f, const DpSgdConfig& c,
                            uint64_t seed, PrivacyLedger& ledger, Fn fn) {
  PoissonSampler sampler(f.data.size(), c.sample_rate,
                         CounterRng(seed, RngStream::kSampler));
  CounterRng noise(seed, RngStream::kScoring);
  ScoringContext ctx{f.model, f.params, f.data, c, sampler, noise, ledger};
  return fn(ctx);
}

std::vector<double> Maskable(const ParamLayout& layout,
                             std::span<const double> full) {
  std::vector<double> out(layout.maskable_dim());
  for (size_t m = 0; m < out.size(); ++m) {
    out[m] = full[layout.MaskableToCoordinate(m)];
  }
  return out;
}

TEST(AccumulateScoresTest, NoNoiseNoClipIsAbsoluteGradient) {
  Fixture f;
  const Batch b = RandomBatch(1, 6, 3, 7);
  const auto per = PerSampleGradientsSerial(f.model, f.params, b);
  ScoreAccumulator acc;
  PrivacyLedger ledger;
  CounterRng rng(1, RngStream::kScoring);
  AccumulateScores(f.model, f.params, b, kInf, 0.0, 0.1, rng, acc, ledger);
  const std::vector<double> g = Maskable(*f.layout, per[0].values());
  ASSERT_EQ(acc.scores.size(), g.size());
  for (size_t i = 0; i < g.size(); ++i) EXPECT_EQ(acc.scores[i], std::abs(g[i]));
  EXPECT_EQ(ledger.total_steps(), 1u);
}

TEST(AccumulateScoresTest, NegatedGradientContributesTheSame) {
  // With zero first-layer weights the hidden activations ignore x, so
  // flipping x flips the fc1.weight gradient and leaves the rest alone.
  Model model = MakeModel(MlpSpec(6, {8}, 3));
  ParamVector p = RandomParams(model, 4);
  const ParamLayout& layout = *model.layout();
  for (double& w : p.segment(layout.Find("fc1.weight"))) w = 0.0;
  for (double& b : p.segment(layout.Find("fc1.bias"))) b = 1.0;
  Batch pos = RandomBatch(1, 6, 3, 9);
  Batch neg = pos;
  for (double& x : neg.inputs.data) x = -x;
  const auto gp = PerSampleGradientsSerial(model, p, pos);
  const auto gn = PerSampleGradientsSerial(model, p, neg);
  const size_t w0 = layout.segment(layout.Find("fc1.weight")).offset;
  ASSERT_NE(gp[0][w0], 0.0);
  EXPECT_EQ(gp[0][w0], -gn[0][w0]);
  for (double clip : {kInf, 0.05}) {
    ScoreAccumulator a, b;
    PrivacyLedger ledger;
    CounterRng r1(1, RngStream::kScoring), r2(1, RngStream::kScoring);
    AccumulateScores(model, p, pos, clip, 0.0, 0.1, r1, a, ledger);
    AccumulateScores(model, p, neg, clip, 0.0, 0.1, r2, b, ledger);
    EXPECT_EQ(a.scores, b.scores) << "clip " << clip;
  }
}

TEST(AccumulateScoresTest, ClipFactorRecomputedIndependently) {
  Fixture f;
  const Batch b = RandomBatch(25, 6, 3, 8);
  const auto per = PerSampleGradientsSerial(f.model, f.params, b);
  std::vector<double> want(f.layout->maskable_dim(), 0.0);
  for (const ParamVector& g : per) {
    double n2 = 0.0;
    for (double x : g.values()) n2 += x * x;
    const double factor = std::max(1.0, std::sqrt(n2) / 0.3);
    const std::vector<double> m = Maskable(*f.layout, g.values());
    for (size_t i = 0; i < m.size(); ++i) want[i] += std::abs(m[i]) / factor;
  }
  ScoreAccumulator acc;
  PrivacyLedger ledger;
  CounterRng rng(1, RngStream::kScoring);
  AccumulateScores(f.model, f.params, b, 0.3, 0.0, 0.1, rng, acc, ledger);
  for (size_t i = 0; i < want.size(); ++i) {
    EXPECT_NEAR(acc.scores[i], want[i], 1e-12);
  }
}

TEST(AccumulateScoresTest, EmptyBatchStillAddsNoiseAndRecords) {
  Fixture f;
  Batch b;
  b.inputs = Matrix(0, 6);
  ScoreAccumulator acc;
  PrivacyLedger ledger;
  CounterRng rng(1, RngStream::kScoring);
  AccumulateScores(f.model, f.params, b, 1.0, 2.0, 0.1, rng, acc, ledger);
  EXPECT_EQ(ledger.events()[0], (SgmEvent{0.1, 2.0, 1}));
  size_t nonzero = 0;
  for (double x : acc.scores) nonzero += x != 0.0;
  EXPECT_EQ(nonzero, acc.scores.size());
}

TEST(GroupScoresTest, SingletonIsIdentity) {
  Fixture f;
  ScoreAccumulator acc(f.layout->maskable_dim());
  CounterRng rng(3, 1);
  for (double& x : acc.scores) x = rng.Gaussian();
  EXPECT_EQ(*GroupScores(acc, *f.singletons), acc.scores);
}

TEST(GroupScoresTest, ConstantScoresTimesRowLength) {
  Fixture f;
  ScoreAccumulator acc(f.layout->maskable_dim());
  std::fill(acc.scores.begin(), acc.scores.end(), 0.5);
  const std::vector<double> v = *GroupScores(acc, *f.rows);
  for (size_t j = 0; j < v.size(); ++j) {
    EXPECT_EQ(v[j], 0.5 * static_cast<double>(f.rows->group_size(j)));
  }
  // fc1 rows have 6 entries, fc2 rows 8.
  EXPECT_EQ(v.front(), 3.0);
  EXPECT_EQ(v.back(), 4.0);
}

TEST(GroupScoresTest, RandomBlocksMatchBruteForce) {
  Fixture f;
  const Grouping g = Grouping::RandomBlocks(*f.layout, 5, 9);
  ScoreAccumulator acc(f.layout->maskable_dim());
  CounterRng rng(4, 1);
  for (double& x : acc.scores) x = rng.Gaussian();
  const std::vector<double> v = *GroupScores(acc, g);
  std::vector<double> want(g.num_groups(), 0.0);
  for (size_t i = 0; i < acc.scores.size(); ++i) {
    want[g.group_of(i)] += acc.scores[i];
  }
  for (size_t j = 0; j < v.size(); ++j) EXPECT_NEAR(v[j], want[j], 1e-14);
}

TEST(GroupScoresTest, SizeMismatchRejected) {
  Fixture f;
  ScoreAccumulator acc(3);
  EXPECT_EQ(GroupScores(acc, *f.rows).status().code(),
            absl::StatusCode::kInvalidArgument);
}

std::shared_ptr<const ParamLayout> OneLayer(size_t rows, size_t cols) {
  auto l = std::make_shared<ParamLayout>();
  l->AddSegment("w", SegmentKind::kWeightMatrix, rows, cols, false);
  return l;
}

TEST(TopKTest, PicksLargestByValue) {
  auto layout = OneLayer(3, 1);
  auto g = std::make_shared<const Grouping>(Grouping::Rows(*layout));
  const std::vector<double> v = {5, 1, 9};
  // floor(0.34 * 3) = 1.
  absl::StatusOr<Mask> m = TopKMask(v, layout, g, SparsityBudget{0.34});
  ASSERT_TRUE(m.ok());
  EXPECT_EQ(std::vector<uint8_t>(m->group_bits().begin(), m->group_bits().end()),
            (std::vector<uint8_t>{0, 0, 1}));
  const std::vector<double> neg = {-5, -1, -9};
  m = TopKMask(neg, layout, g, SparsityBudget{0.34});
  EXPECT_TRUE(m->group_selected(1));
}

TEST(TopKTest, FullBudgetSelectsEverything) {
  Fixture f;
  const std::vector<double> v(f.rows->num_groups(), 1.0);
  absl::StatusOr<Mask> m = TopKMask(v, f.layout, f.rows, SparsityBudget{1.0});
  ASSERT_TRUE(m.ok());
  EXPECT_EQ(m->selected_groups(), f.rows->num_groups());
}

TEST(TopKTest, MatchesSortOracleOnRandomVectors) {
  auto layout = std::make_shared<ParamLayout>();
  layout->AddSegment("a", SegmentKind::kWeightMatrix, 37, 1, false);
  layout->AddSegment("b", SegmentKind::kWeightMatrix, 20, 1, false);
  auto g = std::make_shared<const Grouping>(Grouping::Rows(*layout));
  CounterRng rng(12, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(g->num_groups());
    // Coarse values force ties on some trials.
    const bool coarse = trial % 3 == 0;
    for (double& x : v) x = coarse ? std::floor(4 * rng.Uniform()) : rng.Gaussian();
    const double s = rng.Uniform();
    absl::StatusOr<Mask> m = TopKMask(v, layout, g, SparsityBudget{s});
    ASSERT_TRUE(m.ok());
    const SparsityBudget budget{s};
    for (size_t l = 0; l < 2; ++l) {
      const size_t lo = g->layer_begin(l), hi = g->layer_end(l);
      std::vector<size_t> want = oracle::TopKBySort(
          std::span<const double>(v).subspan(lo, hi - lo),
          budget.GroupsForLayer(hi - lo));
      std::vector<size_t> got;
      for (size_t j = lo; j < hi; ++j) {
        if (m->group_selected(j)) got.push_back(j - lo);
      }
      ASSERT_EQ(got, want) << "trial " << trial << " layer " << l;
    }
  }
}

TEST(TopKTest, ScaleInvariant) {
  Fixture f;
  CounterRng rng(13, 1);
  std::vector<double> v(f.rows->num_groups());
  for (double& x : v) x = rng.Uniform();
  std::vector<double> w = v;
  for (double& x : w) x *= 37.5;
  EXPECT_TRUE(*TopKMask(v, f.layout, f.rows, SparsityBudget{0.4}) ==
              *TopKMask(w, f.layout, f.rows, SparsityBudget{0.4}));
}

TEST(TopKTest, RejectsBadInput) {
  Fixture f;
  std::vector<double> v(f.rows->num_groups(), 1.0);
  v[2] = std::nan("");
  EXPECT_EQ(TopKMask(v, f.layout, f.rows, SparsityBudget{}).status().code(),
            absl::StatusCode::kOutOfRange);
  v.pop_back();
  EXPECT_EQ(TopKMask(v, f.layout, f.rows, SparsityBudget{}).status().code(),
            absl::StatusCode::kInvalidArgument);
}

TEST(SelectTest, SpartaWithoutNoiseOrClipEqualsOracle) {
  Fixture f;
  for (auto grouping : {f.rows, f.singletons}) {
    PrivacyLedger l1, l2;
    const DpSgdConfig c = ScoringConfig(0.0, kInf);
    absl::StatusOr<Mask> a = Select(f, c, 5, l1, [&](const ScoringContext& x) {
      return SelectMaskSparta(x, grouping, SparsityBudget{0.3});
    });
    absl::StatusOr<Mask> b = Select(f, c, 5, l2, [&](const ScoringContext& x) {
      return SelectMaskOracle(x, grouping, SparsityBudget{0.3});
    });
    ASSERT_TRUE(a.ok() && b.ok());
    EXPECT_TRUE(*a == *b);
    EXPECT_TRUE(l2.empty());
  }
}

TEST(SelectTest, DeterministicUnderSeed) {
  Fixture f;
  const DpSgdConfig c = ScoringConfig(1.5, 1.0);
  auto sparta = [&](const ScoringContext& x) {
    return SelectMaskSparta(x, f.rows, SparsityBudget{0.3});
  };
  auto dpsgd = [&](const ScoringContext& x) {
    return SelectMaskDpSgdGradients(x, SparsityBudget{0.3});
  };
  auto orc = [&](const ScoringContext& x) {
    return SelectMaskOracle(x, f.rows, SparsityBudget{0.3});
  };
  PrivacyLedger l;
  EXPECT_TRUE(*Select(f, c, 8, l, sparta) == *Select(f, c, 8, l, sparta));
  EXPECT_TRUE(*Select(f, c, 8, l, dpsgd) == *Select(f, c, 8, l, dpsgd));
  EXPECT_TRUE(*Select(f, c, 8, l, orc) == *Select(f, c, 8, l, orc));
}

TEST(SelectTest, DpSgdGradientsWithoutNoiseIsSignedEpochSum) {
  Fixture f;
  const DpSgdConfig c = ScoringConfig(0.0, 0.5);
  PrivacyLedger ledger;
  absl::StatusOr<Mask> m = Select(f, c, 6, ledger, [&](const ScoringContext& x) {
    return SelectMaskDpSgdGradients(x, SparsityBudget{0.25});
  });
  ASSERT_TRUE(m.ok());
  // Replay the same batches and sum clipped gradients with sign.
  PoissonSampler sampler(f.data.size(), c.sample_rate,
                         CounterRng(6, RngStream::kSampler));
  std::vector<double> total(f.layout->dim(), 0.0);
  for (size_t b = 0; b < c.batches_per_epoch(); ++b) {
    const Batch batch = MakeBatch(f.data, sampler.Next());
    for (const ParamVector& g :
         PerSampleGradientsSerial(f.model, f.params, batch)) {
      const ParamVector cg = Clip(g, 0.5);
      for (size_t j = 0; j < total.size(); ++j) total[j] += cg[j];
    }
  }
  std::vector<double> score = Maskable(*f.layout, total);
  for (double& x : score) x = std::abs(x);
  absl::StatusOr<Mask> want =
      TopKMask(score, f.layout, f.singletons, SparsityBudget{0.25});
  ASSERT_TRUE(want.ok());
  EXPECT_TRUE(*m == *want);
}

TEST(SelectTest, OracleEqualsNoiselessSpartaOnSingletons) {
  Fixture f;
  PrivacyLedger l;
  const DpSgdConfig c = ScoringConfig(0.0, kInf);
  auto a = Select(f, c, 2, l, [&](const ScoringContext& x) {
    return SelectMaskOracle(x, f.singletons, SparsityBudget{0.2});
  });
  auto b = Select(f, c, 2, l, [&](const ScoringContext& x) {
    return SelectMaskSparta(x, f.singletons, SparsityBudget{0.2});
  });
  EXPECT_TRUE(*a == *b);
}

TEST(SelectTest, SpartaAndDpSgdGradientsSpendTheSameBudget) {
  Fixture f;
  const DpSgdConfig c = ScoringConfig(1.3, 1.0);
  PrivacyLedger a, b, o;
  ASSERT_TRUE(Select(f, c, 1, a, [&](const ScoringContext& x) {
                return SelectMaskSparta(x, f.rows, SparsityBudget{0.3});
              }).ok());
  ASSERT_TRUE(Select(f, c, 1, b, [&](const ScoringContext& x) {
                return SelectMaskDpSgdGradients(x, SparsityBudget{0.3});
              }).ok());
  ASSERT_TRUE(Select(f, c, 1, o, [&](const ScoringContext& x) {
                return SelectMaskOracle(x, f.rows, SparsityBudget{0.3});
              }).ok());
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.total_steps(), c.batches_per_epoch());
  EXPECT_TRUE(o.empty());
}

TEST(SelectTest, NoiseCancellationVariance) {
  // Pure-noise accumulators: every group total is a sum of |G| T_b
  // independent N(0, sigma^2 C^2) draws.
  Fixture f;
  Batch empty;
  empty.inputs = Matrix(0, 6);
  const double sigma = 1.7, clip = 0.8;
  const size_t batches = 5;
  const int trials = 10000;
  std::vector<double> sum(f.rows->num_groups(), 0.0);
  std::vector<double> sum2(f.rows->num_groups(), 0.0);
  CounterRng rng(21, RngStream::kScoring);
  for (int t = 0; t < trials; ++t) {
    ScoreAccumulator acc;
    PrivacyLedger ledger;
    for (size_t b = 0; b < batches; ++b) {
      AccumulateScores(f.model, f.params, empty, clip, sigma, 0.1, rng, acc,
                       ledger);
    }
    const std::vector<double> v = *GroupScores(acc, *f.rows);
    for (size_t j = 0; j < v.size(); ++j) {
      sum[j] += v[j];
      sum2[j] += v[j] * v[j];
    }
  }
  for (size_t j : {size_t{0}, f.rows->num_groups() - 1}) {
    const double var = (sum2[j] - sum[j] * sum[j] / trials) / (trials - 1);
    const double want = f.rows->group_size(j) * batches * sigma * sigma *
                        clip * clip;
    EXPECT_NEAR(var, want, 3.0 * want * std::sqrt(2.0 / (trials - 1)))
        << "group " << j;
  }
}

TEST(MagnitudeTest, DominantRowSelected) {
  Fixture f;
  ParamVector p = f.params;
  const int fc1 = f.layout->Find("fc1.weight");
  for (size_t c = 0; c < 6; ++c) p.segment(fc1)[3 * 6 + c] = 100.0;
  absl::StatusOr<Mask> m = SelectMaskMagnitude(p, f.rows, SparsityBudget{0.125});
  ASSERT_TRUE(m.ok());
  EXPECT_EQ(m->selected_groups_in_layer(0), 1u);
  EXPECT_TRUE(m->group_selected(3));
}

TEST(MagnitudeTest, TiesGoToLowestIndex) {
  Fixture f;
  ParamVector p = f.params;
  for (double& x : p.values()) x = 1.0;
  absl::StatusOr<Mask> m = SelectMaskMagnitude(p, f.rows, SparsityBudget{0.25});
  ASSERT_TRUE(m.ok());
  // fc1 has 8 rows (k = 2), fc2 has 5 rows (k = 1).
  EXPECT_TRUE(m->group_selected(0) && m->group_selected(1));
  EXPECT_FALSE(m->group_selected(2));
  EXPECT_TRUE(m->group_selected(8));
  EXPECT_FALSE(m->group_selected(9));
}

TEST(MagnitudeTest, MatchesSortOracle) {
  Fixture f;
  for (uint64_t s = 0; s < 20; ++s) {
    const ParamVector p = RandomParams(f.model, 100 + s);
    absl::StatusOr<Mask> m =
        SelectMaskMagnitude(p, f.rows, SparsityBudget{0.4});
    ASSERT_TRUE(m.ok());
    for (size_t l = 0; l < f.rows->num_layers(); ++l) {
      const size_t lo = f.rows->layer_begin(l), hi = f.rows->layer_end(l);
      std::vector<double> v;
      for (size_t j = lo; j < hi; ++j) {
        double a = 0.0;
        for (size_t i : f.rows->members(j)) {
          a += std::abs(p[f.layout->MaskableToCoordinate(i)]);
        }
        v.push_back(a);
      }
      const std::vector<size_t> want =
          oracle::TopKBySort(v, SparsityBudget{0.4}.GroupsForLayer(hi - lo));
      for (size_t j = lo; j < hi; ++j) {
        const bool in = std::find(want.begin(), want.end(), j - lo) != want.end();
        EXPECT_EQ(m->group_selected(j), in);
      }
    }
  }
}

TEST(RandomTest, FullBudgetSelectsEverything) {
  Fixture f;
  CounterRng rng(1, RngStream::kSelection);
  const Mask m = SelectMaskRandom(f.layout, f.rows, SparsityBudget{1.0}, rng);
  EXPECT_EQ(m.selected_groups(), f.rows->num_groups());
}

TEST(RandomTest, InclusionFrequencyIsUniform) {
  Fixture f;
  const int seeds = 4000;
  const SparsityBudget budget{0.5};
  std::vector<int> hits(f.rows->num_groups(), 0);
  for (int s = 0; s < seeds; ++s) {
    CounterRng rng(s, RngStream::kSelection);
    const Mask m = SelectMaskRandom(f.layout, f.rows, budget, rng);
    ASSERT_TRUE(m.CheckFeasible(budget).ok());
    for (size_t j = 0; j < hits.size(); ++j) hits[j] += m.group_selected(j);
  }
  for (size_t l = 0; l < f.rows->num_layers(); ++l) {
    const size_t q = f.rows->layer_end(l) - f.rows->layer_begin(l);
    const double p = static_cast<double>(budget.GroupsForLayer(q)) / q;
    const double sd = std::sqrt(seeds * p * (1 - p));
    for (size_t j = f.rows->layer_begin(l); j < f.rows->layer_end(l); ++j) {
      EXPECT_NEAR(hits[j], seeds * p, 3.0 * sd) << "group " << j;
    }
  }
}

TEST(FixedMasksTest, BitFitAndLastLayer) {
  Fixture f;
  const Mask bitfit = SelectMaskBitFit(f.layout, f.rows);
  EXPECT_EQ(bitfit.trainable_weights(), 0u);
  const Mask last = SelectMaskLastLayer(f.layout, f.rows);
  EXPECT_EQ(last.trainable_weights(), 0u);
  for (const Segment& s : f.layout->segments()) {
    const bool bit = bitfit.coordinate_filter()[s.offset];
    const bool lst = last.coordinate_filter()[s.offset];
    if (s.classifier_head) {
      EXPECT_TRUE(bit && lst) << s.name;
    } else if (s.kind == SegmentKind::kBias) {
      EXPECT_TRUE(bit && !lst) << s.name;
    } else if (s.kind == SegmentKind::kNormScale) {
      EXPECT_TRUE(bit && lst) << s.name;
    } else {
      EXPECT_FALSE(bit || lst) << s.name;
    }
  }
}

TEST(OverlapTest, CountsAgainstSmallerSide) {
  Fixture f;
  Mask m(f.layout, f.rows, TrainableKinds{});
  m.SetGroup(0, true);  // maskable 0..5
  std::vector<uint8_t> truth(f.layout->maskable_dim(), 0);
  for (size_t i = 3; i < 15; ++i) truth[i] = 1;
  EXPECT_DOUBLE_EQ(MaskOverlap(m, truth), 0.5);
  std::fill(truth.begin(), truth.end(), 0);
  EXPECT_EQ(MaskOverlap(m, truth), 0.0);
}

}  // namespace
}  // namespace dpsparse
