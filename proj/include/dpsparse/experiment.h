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

#ifndef DPSPARSE_EXPERIMENT_H_
#define DPSPARSE_EXPERIMENT_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/statusor.h"
#include "dpsparse/accountant.h"
#include "dpsparse/data.h"
#include "dpsparse/dp_engine.h"
#include "dpsparse/mask.h"
#include "dpsparse/mask_selection.h"
#include "dpsparse/model.h"
#include "dpsparse/param_vector.h"

namespace dpsparse {

enum class Strategy {
  kSparta,
  kDpSgdGrad,
  kOracle,
  kMagnitude,
  kRandom,
  kLast,
  kBitFit,
  kAll,
};

std::string_view StrategyName(Strategy strategy);
// "sparta", "dpsgd-grad", "oracle", "mp", "random", "last", "bitfit", "all".
absl::StatusOr<Strategy> ParseStrategy(std::string_view name);
// Strategies that spend one epoch scoring before the mask is fixed.
bool UsesScoringEpoch(Strategy strategy);

enum class DataSource { kSynthetic, kIdx, kCsv };

struct DataConfig {
  DataSource source = DataSource::kSynthetic;
  TransferTaskSpec synth;
  uint64_t seed = 0;  // task generation and pretraining
  // IDX: train/test image+label pairs; optional public pretrain pair.
  std::string train_images, train_labels, test_images, test_labels;
  std::string pretrain_images, pretrain_labels;
  // CSV: train/test files; optional public pretrain file.
  std::string train_csv, test_csv, pretrain_csv;
};

// Non-private pretraining on the public split.
struct PretrainConfig {
  int epochs = 10;
  size_t batch_size = 100;
  double lr = 0.05;
  double momentum = 0.9;
};

struct TrainConfig {
  // input_dim 0 means "take it from the data".
  ModelSpec model{.hidden = {128}, .norm_scale = true};
  DataConfig data;
  PretrainConfig pretrain;
  DpSgdConfig dp;
  // Nominal batch size; the Poisson rate is batch_size / n.
  size_t batch_size = 500;
  Strategy strategy = Strategy::kSparta;
  GroupingKind grouping = GroupingKind::kRow;
  size_t block_size = 64;  // random grouping only
  double sparsity = 0.2;
  std::optional<double> target_epsilon;
  std::optional<double> sigma;
  double delta = 1e-5;
  std::vector<uint64_t> seeds = {0};
  OracleScore oracle_score = OracleScore::kL1;
  // Masked phases of row-grouped runs use the row-stacked update path.
  bool stacked_updates = false;
  // Fraction of first-layer units left active after pretraining; the rest
  // get a large negative bias so their rows receive no gradient. 0 = off.
  double planted_units = 0.0;

  absl::Status Validate() const;
};

// Data, model and pretrained weights shared by every seed of a run.
struct PreparedTask {
  Model model;
  Dataset train;
  Dataset test;
  ParamVector pretrained;  // finetune layout, head not yet re-drawn
  // Maskable-space indicator of the planted subnetwork; empty if none.
  std::vector<uint8_t> planted_truth;
};

absl::StatusOr<std::shared_ptr<const PreparedTask>> PrepareTask(
    const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  std::string phase;  // "bitfit", "scoring", "masked" or "train"
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double epsilon = 0.0;
  double lr = 0.0;
};

struct MaskStats {
  std::vector<std::string> layers;
  std::vector<double> layer_density;
  size_t selected_groups = 0;
  size_t trainable_weights = 0;
  size_t trainable_coordinates = 0;
  std::optional<double> planted_overlap;
};

struct SeedResult {
  uint64_t seed = 0;
  double accuracy = 0.0;
  double final_epsilon = 0.0;
  std::vector<EpochRecord> epochs;
  MaskStats mask;
  PrivacyLedger ledger;
  // Audit: Poisson batches drawn from the private data versus ledger steps.
  uint64_t batches_drawn = 0;
  uint64_t unaccounted_batches = 0;
};

struct RunReport {
  TrainConfig config;
  double noise_multiplier = 0.0;
  double sample_rate = 0.0;
  bool differentially_private = true;
  std::vector<SeedResult> seeds;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double final_epsilon = 0.0;
  double wall_time_seconds = 0.0;
};

// Test seams and extra outputs for a single seed.
struct RunOptions {
  // Train a masked phase through the dense path when its mask selects every
  // group with the default trainable kinds.
  bool dense_when_full = false;
};

struct SeedArtifacts {
  ParamVector initial;  // W_old: pretrained weights with the new head
  ParamVector final_params;
  std::optional<Mask> mask;  // mask of the last phase; none for "all"
};

// Ledger the run's schedule records at training noise `sigma`.
PrivacyLedger PlannedLedger(const TrainConfig& config, size_t dataset_size,
                            double sigma);
// Number of private training examples, loading the data if it is not
// synthetic.
absl::StatusOr<size_t> TrainSetSize(const DataConfig& config);

// Noise multiplier for the run: explicit sigma, or calibrated so T epochs of
// (q, sigma) events meet the target.
absl::StatusOr<double> ResolveNoiseMultiplier(const TrainConfig& config,
                                              size_t dataset_size);

absl::StatusOr<SeedResult> RunSeed(const TrainConfig& config,
                                   const PreparedTask& task, double sigma,
                                   uint64_t seed, const RunOptions& options = {},
                                   SeedArtifacts* artifacts = nullptr);

// Called after each seed, e.g. to persist its mask and weights.
using SeedCallback =
    std::function<absl::Status(const SeedResult&, const SeedArtifacts&)>;

absl::StatusOr<RunReport> RunExperiment(const TrainConfig& config,
                                        const SeedCallback& on_seed = {});

}  // namespace dpsparse

#endif  // DPSPARSE_EXPERIMENT_H_
