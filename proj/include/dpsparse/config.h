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

#ifndef DPSPARSE_CONFIG_H_
#define DPSPARSE_CONFIG_H_

#include <string>

#include "absl/status/statusor.h"
#include "dpsparse/experiment.h"
#include "json.hpp"

namespace dpsparse {

// JSON run configuration. Every key is optional and defaults to the value
// in TrainConfig; unknown keys are rejected. Schema:
//
// {
//   "strategy": "sparta" | "dpsgd-grad" | "oracle" | "mp" | "random" |
//               "last" | "bitfit" | "all",
//   "grouping": "row" | "singleton" | "random", "block_size": 64,
//   "sparsity": 0.2,
//   "epsilon": 1.0,            // or "sigma": 1.1, not both
//   "delta": 1e-5, "seeds": [0, 1, 2], "batch_size": 500,
//   "oracle_score": "l1" | "l2", "stacked_updates": false,
//   "planted_units": 0.0,
//   "model": {"hidden": [128], "norm_scale": true,
//             "conv": {"in_channels": 1, "out_channels": 4, "kernel": 3}},
//   "data": {"source": "synthetic" | "idx" | "csv", "seed": 0,
//            "synthetic": {"input_dim": 64, "num_classes": 4,
//                          "pretrain_classes": 8, "clusters_per_class": 2,
//                          "separation": 3.0, "pretrain_separation": 4.0,
//                          "planted_fraction": 0.0, "relatedness": 0.5,
//                          "n_pretrain": 10000, "n_train": 10000,
//                          "n_test": 2000},
//            "train_images": "...", "train_labels": "...",
//            "test_images": "...", "test_labels": "...",
//            "pretrain_images": "...", "pretrain_labels": "...",
//            "train_csv": "...", "test_csv": "...", "pretrain_csv": "..."},
//   "pretrain": {"epochs": 10, "batch_size": 100, "lr": 0.05,
//                "momentum": 0.9},
//   "dp": {"clip": 1.0, "mask_noise_multiplier": -1, "lr": 0.01,
//          "classifier_lr": 0.1, "momentum": 0.9,
//          "schedule": "cosine" | "constant", "warmup_fraction": 0.02,
//          "epochs": 50, "mask_epoch": 10}
// }
absl::StatusOr<TrainConfig> TrainConfigFromJson(const nlohmann::json& j);
absl::StatusOr<TrainConfig> LoadTrainConfig(const std::string& path);
nlohmann::json TrainConfigToJson(const TrainConfig& config);

}  // namespace dpsparse

#endif  // DPSPARSE_CONFIG_H_
