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

#ifndef DPSPARSE_DATA_H_
#define DPSPARSE_DATA_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "dpsparse/matrix.h"

namespace dpsparse {

enum class Split { kPretrain, kFinetuneTrain, kFinetuneTest };

std::string_view SplitName(Split split);

// Per-dimension affine normalization. Dimensions with zero spread get unit
// scale so they map to 0.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool empty() const { return mean.empty(); }
};

struct Dataset {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;
  Split split = Split::kFinetuneTrain;
  NormStats norm;  // stats applied to `features`, empty if raw

  size_t size() const { return labels.size(); }
  size_t dim() const { return features.cols; }
};

absl::StatusOr<NormStats> FitNormalization(const Matrix& features);
// Normalizes in place and records `stats` on the dataset.
absl::Status ApplyNormalization(const NormStats& stats, Dataset& dataset);

// IDX image (magic 0x00000803, dims N x rows x cols) and label (0x00000801)
// files. Pixels are scaled to [0, 1]; no normalization is applied. Parse
// failures are DataLoss errors naming the file and byte offset.
absl::StatusOr<Dataset> ParseIdx(std::span<const uint8_t> images,
                                 std::span<const uint8_t> labels,
                                 Split split = Split::kFinetuneTrain);
absl::StatusOr<Dataset> LoadIdx(const std::string& images_path,
                                const std::string& labels_path,
                                Split split = Split::kFinetuneTrain);

// Comma-separated text with a header row; the column named "label" holds
// integer class ids, every other column is a feature.
absl::StatusOr<Dataset> ParseCsv(std::string_view text,
                                 Split split = Split::kFinetuneTrain);
absl::StatusOr<Dataset> LoadCsv(const std::string& path,
                                Split split = Split::kFinetuneTrain);

// Desk-scale transfer task. Finetune classes are Gaussian mixtures whose
// cluster means have norm `separation`; with planted_fraction > 0 the means
// are supported on a random subset of input dimensions and every other
// dimension is independent N(0, 1) noise. Pretrain class means mix the
// finetune mean directions (weight `relatedness`) with fresh directions.
struct TransferTaskSpec {
  size_t input_dim = 64;
  int num_classes = 4;
  int pretrain_classes = 8;
  int clusters_per_class = 2;
  double separation = 3.0;
  double pretrain_separation = 4.0;
  double planted_fraction = 0.0;
  double relatedness = 0.5;
  size_t n_pretrain = 10000;
  size_t n_train = 10000;
  size_t n_test = 2000;

  absl::Status Validate() const;
};

struct TransferTask {
  Dataset pretrain;
  Dataset train;
  Dataset test;
  // Input dimensions that carry label information, ascending. All
  // dimensions when nothing is planted.
  std::vector<size_t> planted_dims;
};

// Deterministic in (spec, seed). Pretrain is normalized with its own stats,
// finetune train/test with finetune-train stats.
absl::StatusOr<TransferTask> SynthTransferTask(const TransferTaskSpec& spec,
                                               uint64_t seed);

}  // namespace dpsparse

#endif  // DPSPARSE_DATA_H_
