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

#ifndef DPSPARSE_REPORT_H_
#define DPSPARSE_REPORT_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "dpsparse/experiment.h"
#include "json.hpp"

namespace dpsparse {

// Full RunReport as JSON. Non-finite numbers are written as null.
nlohmann::json RunReportToJson(const RunReport& report,
                               bool include_wall_time = true);

// {"error": {"code": "INVALID_ARGUMENT", "kind": "usage", "message": ...}}
nlohmann::json ErrorToJson(const absl::Status& status);
// Short class of an error: usage, numeric, parse, calibration, io, internal.
std::string_view ErrorKind(const absl::Status& status);

// One CSV row per (run, seed).
struct SweepRow {
  std::string strategy;
  std::optional<double> epsilon;  // target; empty for explicit-sigma runs
  double delta = 0.0;
  double sparsity = 0.0;
  std::string grouping;
  uint64_t seed = 0;
  std::optional<double> accuracy;
  std::optional<double> final_epsilon;
  std::string status = "ok";

  bool operator==(const SweepRow&) const = default;
};

// strategy,epsilon,delta,sparsity,grouping,seed,accuracy,final_epsilon,status
std::string_view SweepCsvHeader();
std::vector<SweepRow> ReportRows(const RunReport& report);
// Rows for a run that failed before producing a report.
std::vector<SweepRow> FailedRows(const TrainConfig& config,
                                 const absl::Status& status);
std::string FormatSweepCsv(const std::vector<SweepRow>& rows);
absl::StatusOr<std::vector<SweepRow>> ParseSweepCsv(std::string_view text);

struct SweepResult {
  std::vector<SweepRow> rows;
  // One entry per config: the report, or the error that stopped it.
  std::vector<absl::StatusOr<RunReport>> runs;
};

// Runs configs in order; a failing run is recorded and the sweep continues.
SweepResult RunSweep(const std::vector<TrainConfig>& configs);

// Sweep file: {"base": <config>, "grid": {"strategy": [...],
// "epsilon": [...], "sparsity": [...], "grouping": [...], "sigma": [...]}}.
// Expansion order is strategy, epsilon, sigma, sparsity, grouping with the
// last key varying fastest. A file without "grid" is a single config.
absl::StatusOr<std::vector<TrainConfig>> ExpandSweep(const nlohmann::json& j);

}  // namespace dpsparse

#endif  // DPSPARSE_REPORT_H_
