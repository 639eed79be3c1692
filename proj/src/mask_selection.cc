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

#include "dpsparse/mask_selection.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "absl/strings/str_cat.h"
#include "dpsparse/kernels.h"

namespace dpsparse {
namespace {

// Copies the maskable coordinates of a full-length vector, in maskable order.
void AddMaskable(const ParamLayout& layout, std::span<const double> full,
                 std::span<double> out) {
  for (size_t seg : layout.maskable_segments()) {
    const Segment& s = layout.segment(seg);
    const size_t base = layout.maskable_offset(seg);
    for (size_t i = 0; i < s.size(); ++i) out[base + i] += full[s.offset + i];
  }
}

absl::StatusOr<Mask> RankAndSelect(const ScoreAccumulator& acc,
                                   std::shared_ptr<const ParamLayout> layout,
                                   std::shared_ptr<const Grouping> grouping,
                                   const SparsityBudget& budget,
                                   TrainableKinds kinds) {
  absl::StatusOr<std::vector<double>> v = GroupScores(acc, *grouping);
  if (!v.ok()) return v.status();
  return TopKMask(*v, std::move(layout), std::move(grouping), budget, kinds);
}

std::shared_ptr<const ParamLayout> LayoutOf(const ScoringContext& ctx) {
  return ctx.params.layout_ptr();
}

}  // namespace

void AccumulateScores(const Model& model, const ParamVector& params,
                      const Batch& batch, double clip, double noise_multiplier,
                      double sample_rate, CounterRng& rng,
                      ScoreAccumulator& acc, PrivacyLedger& ledger) {
  const ParamLayout& layout = params.layout();
  if (acc.scores.empty()) acc.scores.assign(layout.maskable_dim(), 0.0);
  ledger.Record(sample_rate, noise_multiplier);
  if (batch.size() > 0) {
    ClipOptions options;
    options.clip = clip;
    options.transform = GradientTransform::kAbsolute;
    const ClippedSum sum =
        ClippedGradientSumParallel(model, params, batch, options);
    AddMaskable(layout, sum.sum, acc.scores);
  }
  if (noise_multiplier > 0.0) {
    AddGaussianNoise(acc.scores, noise_multiplier * clip, {}, rng);
  }
  ++acc.batches_seen;
}

absl::StatusOr<std::vector<double>> GroupScores(const ScoreAccumulator& acc,
                                                const Grouping& grouping,
                                                bool average) {
  if (acc.scores.size() != grouping.maskable_dim()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "grouping covers ", grouping.maskable_dim(), " indices, scores have ",
        acc.scores.size()));
  }
  std::vector<double> v(grouping.num_groups(), 0.0);
  for (size_t g = 0; g < v.size(); ++g) {
    double s = 0.0;
    for (size_t m : grouping.members(g)) s += acc.scores[m];
    v[g] = s;
  }
  if (average && acc.batches_seen > 0) {
    for (double& x : v) x /= static_cast<double>(acc.batches_seen);
  }
  return v;
}

absl::StatusOr<Mask> TopKMask(std::span<const double> group_scores,
                              std::shared_ptr<const ParamLayout> layout,
                              std::shared_ptr<const Grouping> grouping,
                              const SparsityBudget& budget,
                              TrainableKinds kinds) {
  if (group_scores.size() != grouping->num_groups()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "expected ", grouping->num_groups(), " group scores, got ",
        group_scores.size()));
  }
  for (double x : group_scores) {
    if (!std::isfinite(x)) {
      return absl::OutOfRangeError("group scores must be finite");
    }
  }
  Mask mask(std::move(layout), grouping, kinds);
  const std::vector<size_t> k = budget.PerLayer(*grouping);
  std::vector<size_t> order;
  for (size_t l = 0; l < grouping->num_layers(); ++l) {
    const size_t lo = grouping->layer_begin(l);
    const size_t hi = grouping->layer_end(l);
    order.resize(hi - lo);
    std::iota(order.begin(), order.end(), lo);
    auto better = [&](size_t a, size_t b) {
      if (group_scores[a] != group_scores[b]) {
        return group_scores[a] > group_scores[b];
      }
      return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + k[l], order.end(),
                      better);
    for (size_t i = 0; i < k[l]; ++i) mask.SetGroup(order[i], true);
  }
  return mask;
}

absl::StatusOr<Mask> SelectMaskSparta(const ScoringContext& ctx,
                                      std::shared_ptr<const Grouping> grouping,
                                      const SparsityBudget& budget,
                                      TrainableKinds kinds) {
  ScoreAccumulator acc(ctx.params.layout().maskable_dim());
  const double sigma = ctx.config.scoring_noise_multiplier();
  for (size_t b = 0; b < ctx.config.batches_per_epoch(); ++b) {
    const std::vector<size_t> ids = ctx.sampler.Next();
    const Batch batch = MakeBatch(ctx.data, ids);
    AccumulateScores(ctx.model, ctx.params, batch, ctx.config.clip, sigma,
                     ctx.config.sample_rate, ctx.noise_rng, acc, ctx.ledger);
  }
  return RankAndSelect(acc, LayoutOf(ctx), std::move(grouping), budget, kinds);
}

absl::StatusOr<Mask> SelectMaskDpSgdGradients(const ScoringContext& ctx,
                                              const SparsityBudget& budget,
                                              TrainableKinds kinds) {
  const ParamLayout& layout = ctx.params.layout();
  ScoreAccumulator acc(layout.maskable_dim());
  const double sigma = ctx.config.scoring_noise_multiplier();
  ClipOptions options;
  options.clip = ctx.config.clip;
  for (size_t b = 0; b < ctx.config.batches_per_epoch(); ++b) {
    const std::vector<size_t> ids = ctx.sampler.Next();
    const Batch batch = MakeBatch(ctx.data, ids);
    ctx.ledger.Record(ctx.config.sample_rate, sigma);
    if (batch.size() > 0) {
      const ClippedSum sum =
          ClippedGradientSumParallel(ctx.model, ctx.params, batch, options);
      AddMaskable(layout, sum.sum, acc.scores);
    }
    if (sigma > 0.0) {
      AddGaussianNoise(acc.scores, sigma * ctx.config.clip, {}, ctx.noise_rng);
    }
    ++acc.batches_seen;
  }
  for (double& x : acc.scores) x = std::fabs(x);
  auto grouping = std::make_shared<const Grouping>(Grouping::Singleton(layout));
  return RankAndSelect(acc, LayoutOf(ctx), std::move(grouping), budget, kinds);
}

absl::StatusOr<Mask> SelectMaskOracle(const ScoringContext& ctx,
                                      std::shared_ptr<const Grouping> grouping,
                                      const SparsityBudget& budget,
                                      OracleScore score, TrainableKinds kinds) {
  const ParamLayout& layout = ctx.params.layout();
  ScoreAccumulator acc(layout.maskable_dim());
  ClipOptions options;
  options.transform = score == OracleScore::kL1 ? GradientTransform::kAbsolute
                                                : GradientTransform::kSquare;
  for (size_t b = 0; b < ctx.config.batches_per_epoch(); ++b) {
    const std::vector<size_t> ids = ctx.sampler.Next();
    const Batch batch = MakeBatch(ctx.data, ids);
    if (batch.size() > 0) {
      const ClippedSum sum =
          ClippedGradientSumParallel(ctx.model, ctx.params, batch, options);
      AddMaskable(layout, sum.sum, acc.scores);
    }
    ++acc.batches_seen;
  }
  return RankAndSelect(acc, LayoutOf(ctx), std::move(grouping), budget, kinds);
}

absl::StatusOr<Mask> SelectMaskMagnitude(
    const ParamVector& params_old, std::shared_ptr<const Grouping> grouping,
    const SparsityBudget& budget, TrainableKinds kinds) {
  const ParamLayout& layout = params_old.layout();
  ScoreAccumulator acc(layout.maskable_dim());
  for (size_t seg : layout.maskable_segments()) {
    std::span<const double> w = params_old.segment(seg);
    const size_t base = layout.maskable_offset(seg);
    for (size_t i = 0; i < w.size(); ++i) acc.scores[base + i] = std::fabs(w[i]);
  }
  return RankAndSelect(acc, params_old.layout_ptr(), std::move(grouping),
                       budget, kinds);
}

Mask SelectMaskRandom(std::shared_ptr<const ParamLayout> layout,
                      std::shared_ptr<const Grouping> grouping,
                      const SparsityBudget& budget, CounterRng& rng,
                      TrainableKinds kinds) {
  Mask mask(std::move(layout), grouping, kinds);
  const std::vector<size_t> k = budget.PerLayer(*grouping);
  std::vector<size_t> ids;
  for (size_t l = 0; l < grouping->num_layers(); ++l) {
    const size_t lo = grouping->layer_begin(l);
    const size_t n = grouping->layer_end(l) - lo;
    ids.resize(n);
    std::iota(ids.begin(), ids.end(), lo);
    for (size_t i = 0; i < k[l]; ++i) {
      std::swap(ids[i], ids[i + rng.Below(n - i)]);
      mask.SetGroup(ids[i], true);
    }
  }
  return mask;
}

Mask SelectMaskLastLayer(std::shared_ptr<const ParamLayout> layout,
                         std::shared_ptr<const Grouping> grouping) {
  return Mask(std::move(layout), std::move(grouping),
              TrainableKinds{.bias = false, .norm_scale = true, .head = true});
}

Mask SelectMaskBitFit(std::shared_ptr<const ParamLayout> layout,
                      std::shared_ptr<const Grouping> grouping) {
  return Mask(std::move(layout), std::move(grouping), TrainableKinds{});
}

double MaskOverlap(const Mask& mask, std::span<const uint8_t> truth) {
  std::span<const uint8_t> m = mask.maskable_bits();
  size_t selected = 0;
  size_t planted = 0;
  size_t both = 0;
  for (size_t i = 0; i < m.size() && i < truth.size(); ++i) {
    selected += m[i] != 0;
    planted += truth[i] != 0;
    both += (m[i] != 0) && (truth[i] != 0);
  }
  const size_t denom = std::min(selected, planted);
  return denom == 0 ? 0.0 : static_cast<double>(both) / denom;
}

}  // namespace dpsparse
