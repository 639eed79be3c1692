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

#ifndef DPSPARSE_DP_ENGINE_H_
#define DPSPARSE_DP_ENGINE_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "dpsparse/accountant.h"
#include "dpsparse/data.h"
#include "dpsparse/mask.h"
#include "dpsparse/model.h"
#include "dpsparse/param_vector.h"
#include "dpsparse/rng.h"

namespace dpsparse {

enum class ScheduleKind { kConstant, kCosine };

struct DpSgdConfig {
  double clip = 1.0;
  double noise_multiplier = 1.0;
  // Noise multiplier of the scoring epoch; negative means "same as training".
  double mask_noise_multiplier = -1.0;
  double sample_rate = 0.05;
  double lr = 0.01;
  double classifier_lr = 0.1;
  double momentum = 0.9;
  ScheduleKind schedule = ScheduleKind::kCosine;
  double warmup_fraction = 0.02;
  int epochs = 50;
  int mask_epoch = 10;

  absl::Status Validate() const;
  double scoring_noise_multiplier() const {
    return mask_noise_multiplier < 0.0 ? noise_multiplier
                                       : mask_noise_multiplier;
  }
  // ceil(1 / q).
  size_t batches_per_epoch() const;
};

// Multiplier on the base learning rates at optimizer step `step` (0-based)
// of `total_steps`. Cosine: linear warmup over ceil(warmup * total) steps,
// then 0.5 (1 + cos(pi * t / (total - warmup))).
double LearningRateFactor(const DpSgdConfig& config, size_t step,
                          size_t total_steps);

// g / max(1, |g|_filter / C). The norm covers coordinates whose filter entry
// is 1 (all when empty); filtered-out coordinates are zeroed.
ParamVector Clip(const ParamVector& g, double clip,
                 std::span<const uint8_t> filter = {});

// Poisson subsampling: every call draws a fresh batch in which each of the
// n points is included independently with probability q. Indices ascend.
class PoissonSampler {
 public:
  PoissonSampler(size_t dataset_size, double sample_rate, CounterRng rng);

  std::vector<size_t> Next();

  size_t dataset_size() const { return dataset_size_; }
  double sample_rate() const { return sample_rate_; }
  // Audit counter: number of batches handed out so far.
  uint64_t batches_drawn() const { return batches_drawn_; }

 private:
  size_t dataset_size_;
  double sample_rate_;
  CounterRng rng_;
  uint64_t batches_drawn_ = 0;
};

Batch MakeBatch(const Dataset& data, std::span<const size_t> ids);

// Adds i.i.d. N(0, stddev^2) to every coordinate whose filter entry is 1 (all
// when empty), in ascending index order.
void AddGaussianNoise(std::span<double> values, double stddev,
                      std::span<const uint8_t> filter, CounterRng& rng);

// (sum + N(0, sigma^2 C^2 I)) / (q n) on the filtered coordinates, and one
// (q, sigma) event appended to `ledger`. Coordinates outside the filter are
// returned as zero.
ParamVector PrivatizeSum(std::vector<double> clipped_sum,
                         std::shared_ptr<const ParamLayout> layout,
                         const DpSgdConfig& config, size_t dataset_size,
                         std::span<const uint8_t> filter, CounterRng& rng,
                         PrivacyLedger& ledger);

// Reference form taking materialized per-sample gradients: clip each, sum in
// order, privatize.
absl::StatusOr<ParamVector> NoisyBatchGrad(
    const std::vector<ParamVector>& per_sample,
    std::shared_ptr<const ParamLayout> layout, const DpSgdConfig& config,
    size_t dataset_size, std::span<const uint8_t> filter, CounterRng& rng,
    PrivacyLedger& ledger);

struct MomentumState {
  std::vector<double> velocity;  // lazily sized to the parameter dimension
  void Reset() { velocity.clear(); }
};

// Heavy-ball SGD on the trainable coordinates: v = mu v + g, w -= eta v,
// with eta = classifier_lr or lr times `lr_factor`. A null mask trains every
// coordinate (dense path).
absl::Status Step(ParamVector& params, const ParamVector& grad,
                  const Mask* mask, const DpSgdConfig& config,
                  double lr_factor, MomentumState& momentum);

// Row-stacked update path for row-grouped masks. Selected rows of each
// maskable layer live in a compact (k x cols) matrix that receives the
// updates; frozen rows are never touched and the full vector is rebuilt by
// scattering the stacked rows over W_old.
class StackedRowState {
 public:
  // Fails with InvalidArgument unless the mask uses row grouping.
  static absl::StatusOr<StackedRowState> Create(const ParamVector& params,
                                                const Mask& mask,
                                                const MomentumState& momentum);

  absl::Status Step(const ParamVector& grad, const DpSgdConfig& config,
                    double lr_factor);

  ParamVector Materialize() const;
  // Velocity in full-vector layout (zero on frozen coordinates).
  MomentumState MaterializeMomentum() const;
  size_t stacked_rows() const;

 private:
  struct Layer {
    size_t segment = 0;
    size_t cols = 0;
    std::vector<size_t> rows;
    std::vector<double> values;
    std::vector<double> velocity;
  };

  StackedRowState() = default;

  ParamVector base_;  // W_old plus the always-trainable segments
  std::vector<uint8_t> dense_filter_;  // always-trainable coordinates
  std::vector<double> dense_velocity_;
  std::vector<Layer> layers_;
};

// Functional wrapper: stack, one update, scatter. Matches Step() bit for
// bit on the same inputs.
absl::StatusOr<ParamVector> StackedStep(const ParamVector& params,
                                        const ParamVector& grad,
                                        const Mask& mask,
                                        const DpSgdConfig& config,
                                        double lr_factor,
                                        MomentumState& momentum);

}  // namespace dpsparse

#endif  // DPSPARSE_DP_ENGINE_H_
