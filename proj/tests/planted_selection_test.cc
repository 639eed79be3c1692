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

// Mask selection on the planted transfer task, scored once at the noise
// level calibrated for the whole fine-tuning run.

#include <cmath>
#include <numeric>
#include <vector>

#include "gtest/gtest.h"
#include "dpsparse/experiment.h"
#include "test_util.h"

namespace dpsparse {
namespace {

struct Selection {
  std::vector<double> overlap;
  std::vector<size_t> selected;
};

Selection ScoreOnly(Strategy strategy, GroupingKind grouping) {
  TrainConfig c = testing::PlantedConfig();
  const size_t n = *TrainSetSize(c.data);
  const double sigma = *ResolveNoiseMultiplier(c, n);
  c.target_epsilon.reset();
  c.sigma = sigma;
  c.strategy = strategy;
  c.grouping = grouping;
  c.dp.epochs = c.dp.mask_epoch + 1;
  auto task = *PrepareTask(c);
  Selection out;
  for (uint64_t seed : c.seeds) {
    absl::StatusOr<SeedResult> r = RunSeed(c, *task, sigma, seed);
    EXPECT_TRUE(r.ok()) << r.status();
    if (!r.ok()) continue;
    out.overlap.push_back(r->mask.planted_overlap.value_or(-1.0));
    out.selected.push_back(r->mask.trainable_weights);
  }
  return out;
}

double Mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

TEST(PlantedSelectionTest, SpartaRowsFindPlantedUnits) {
  const Selection s = ScoreOnly(Strategy::kSparta, GroupingKind::kRow);
  ASSERT_EQ(s.overlap.size(), 10u);
  EXPECT_GE(Mean(s.overlap), 0.8);
}

TEST(PlantedSelectionTest, OracleFindsPlantedUnits) {
  const Selection s = ScoreOnly(Strategy::kOracle, GroupingKind::kRow);
  ASSERT_EQ(s.overlap.size(), 10u);
  EXPECT_GE(Mean(s.overlap), 0.95);
}

// Overlap of a uniformly drawn k-subset with the planted set is
// hypergeometric; the mean over seeds must sit within 3 standard errors.
TEST(PlantedSelectionTest, NoisyGradientSelectionLooksRandom) {
  const Selection s = ScoreOnly(Strategy::kDpSgdGrad, GroupingKind::kSingleton);
  ASSERT_EQ(s.overlap.size(), 10u);
  const TrainConfig c = testing::PlantedConfig();
  auto task = *PrepareTask(c);
  const double total = task->planted_truth.size();
  const double planted = std::accumulate(task->planted_truth.begin(),
                                         task->planted_truth.end(), 0.0);
  const double k = s.selected[0];
  for (size_t sel : s.selected) ASSERT_EQ(sel, s.selected[0]);
  const double denom = std::min(k, planted);
  const double p = planted / total;
  const double mean = k * p / denom;
  const double sd =
      std::sqrt(k * p * (1 - p) * (total - k) / (total - 1)) / denom;
  const double se = sd / std::sqrt(static_cast<double>(s.overlap.size()));
  EXPECT_NEAR(Mean(s.overlap), mean, 3 * se)
      << "hypergeometric mean " << mean << ", se " << se;
}

}  // namespace
}  // namespace dpsparse
