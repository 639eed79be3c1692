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

#ifndef DPSPARSE_MASK_SELECTION_H_
#define DPSPARSE_MASK_SELECTION_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "absl/status/statusor.h"
#include "dpsparse/accountant.h"
#include "dpsparse/data.h"
#include "dpsparse/dp_engine.h"
#include "dpsparse/mask.h"
#include "dpsparse/model.h"
#include "dpsparse/param_vector.h"
#include "dpsparse/rng.h"

namespace dpsparse {

// Running per-coordinate scores over the maskable index space.
struct ScoreAccumulator {
  std::vector<double> scores;
  uint64_t batches_seen = 0;

  ScoreAccumulator() = default;
  explicit ScoreAccumulator(size_t maskable_dim) : scores(maskable_dim, 0.0) {}
};

// One private scoring batch:
//   scores += sum_i |g_i| / max(1, |g_i|_2 / C) + N(0, sigma^2 C^2 I)
// restricted to maskable coordinates. The clip uses the norm of the full
// per-sample gradient. Appends one (q, sigma) event to `ledger`; an empty
// batch still adds noise and records the event.
void AccumulateScores(const Model& model, const ParamVector& params,
                      const Batch& batch, double clip, double noise_multiplier,
                      double sample_rate, CounterRng& rng,
                      ScoreAccumulator& acc, PrivacyLedger& ledger);

// v_j = sum of scores over group j, optionally divided by batches_seen.
absl::StatusOr<std::vector<double>> GroupScores(const ScoreAccumulator& acc,
                                                const Grouping& grouping,
                                                bool average = false);

// Per layer, the k_layer groups with the largest score (by value, ties to the
// lowest group id) are selected.
absl::StatusOr<Mask> TopKMask(std::span<const double> group_scores,
                              std::shared_ptr<const ParamLayout> layout,
                              std::shared_ptr<const Grouping> grouping,
                              const SparsityBudget& budget,
                              TrainableKinds kinds = {});

// Everything a data-driven selector consumes. Batches come from `sampler`
// so they count toward the run's audit.
struct ScoringContext {
  const Model& model;
  const ParamVector& params;
  const Dataset& data;
  const DpSgdConfig& config;
  PoissonSampler& sampler;
  CounterRng& noise_rng;
  PrivacyLedger& ledger;
};

// One epoch of private absolute-gradient scoring, grouped, then top-k.
absl::StatusOr<Mask> SelectMaskSparta(const ScoringContext& ctx,
                                      std::shared_ptr<const Grouping> grouping,
                                      const SparsityBudget& budget,
                                      TrainableKinds kinds = {});

// One epoch of noisy clipped gradient sums accumulated with sign; coordinates
// are ranked by the magnitude of the epoch total. Singleton grouping.
absl::StatusOr<Mask> SelectMaskDpSgdGradients(const ScoringContext& ctx,
                                              const SparsityBudget& budget,
                                              TrainableKinds kinds = {});

enum class OracleScore {
  kL1,  // sum |g|
  kL2,  // sum g^2
};

// Exact unclipped scores over one epoch; no noise and no ledger events. Not
// differentially private.
absl::StatusOr<Mask> SelectMaskOracle(const ScoringContext& ctx,
                                      std::shared_ptr<const Grouping> grouping,
                                      const SparsityBudget& budget,
                                      OracleScore score = OracleScore::kL1,
                                      TrainableKinds kinds = {});

// Groups ranked by sum |W_old|; touches no data.
absl::StatusOr<Mask> SelectMaskMagnitude(
    const ParamVector& params_old, std::shared_ptr<const Grouping> grouping,
    const SparsityBudget& budget, TrainableKinds kinds = {});

// k_layer groups per layer, uniformly without replacement.
Mask SelectMaskRandom(std::shared_ptr<const ParamLayout> layout,
                      std::shared_ptr<const Grouping> grouping,
                      const SparsityBudget& budget, CounterRng& rng,
                      TrainableKinds kinds = {});

// Classifier head and norm-scale gains only.
Mask SelectMaskLastLayer(std::shared_ptr<const ParamLayout> layout,
                         std::shared_ptr<const Grouping> grouping);

// Biases, norm-scale gains and the classifier head.
Mask SelectMaskBitFit(std::shared_ptr<const ParamLayout> layout,
                      std::shared_ptr<const Grouping> grouping);

// |selected ∩ truth| / min(|selected|, |truth|) over maskable coordinates;
// 0 when either side is empty.
double MaskOverlap(const Mask& mask, std::span<const uint8_t> truth);

}  // namespace dpsparse

#endif  // DPSPARSE_MASK_SELECTION_H_
