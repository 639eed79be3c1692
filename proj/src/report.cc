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

#include "dpsparse/report.h"

#include <charconv>
#include <cmath>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_join.h"
#include "absl/strings/str_split.h"
#include "absl/strings/strip.h"
#include "dpsparse/config.h"
#include "dpsparse/status_macros.h"

namespace dpsparse {
namespace {

using nlohmann::json;

json Num(double x) {
  if (!std::isfinite(x)) return nullptr;
  return x;
}

std::string FormatDouble(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, r.ptr);
}

std::string FormatOptional(const std::optional<double>& x) {
  if (!x || !std::isfinite(*x)) return "";
  return FormatDouble(*x);
}

absl::StatusOr<std::optional<double>> ParseOptional(absl::string_view cell,
                                                    size_t line) {
  if (cell.empty()) return std::optional<double>();
  double v = 0.0;
  const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (r.ec != std::errc() || r.ptr != cell.data() + cell.size()) {
    return absl::DataLossError(
        absl::StrCat("sweep CSV line ", line, ": bad number \"", std::string(cell),
                     "\""));
  }
  return std::optional<double>(v);
}

json EpochToJson(const EpochRecord& e) {
  return {{"epoch", e.epoch},         {"phase", e.phase},
          {"train_loss", Num(e.train_loss)},
          {"test_accuracy", Num(e.test_accuracy)},
          {"epsilon", Num(e.epsilon)}, {"lr", Num(e.lr)}};
}

json MaskStatsToJson(const MaskStats& m) {
  json j;
  json layers = json::array();
  for (size_t i = 0; i < m.layers.size(); ++i) {
    layers.push_back({{"name", m.layers[i]},
                      {"density", i < m.layer_density.size()
                                      ? Num(m.layer_density[i])
                                      : json(nullptr)}});
  }
  j["layers"] = layers;
  j["selected_groups"] = m.selected_groups;
  j["trainable_weights"] = m.trainable_weights;
  j["trainable_coordinates"] = m.trainable_coordinates;
  j["planted_overlap"] =
      m.planted_overlap ? Num(*m.planted_overlap) : json(nullptr);
  return j;
}

}  // namespace

std::string_view ErrorKind(const absl::Status& status) {
  switch (status.code()) {
    case absl::StatusCode::kInvalidArgument:
      return "usage";
    case absl::StatusCode::kOutOfRange:
      return "numeric";
    case absl::StatusCode::kDataLoss:
      return "parse";
    case absl::StatusCode::kFailedPrecondition:
      return "calibration";
    case absl::StatusCode::kNotFound:
    case absl::StatusCode::kUnavailable:
    case absl::StatusCode::kPermissionDenied:
      return "io";
    default:
      return "internal";
  }
}

json ErrorToJson(const absl::Status& status) {
  return {{"error",
           {{"code", absl::StatusCodeToString(status.code())},
            {"kind", std::string(ErrorKind(status))},
            {"message", std::string(status.message())}}}};
}

json RunReportToJson(const RunReport& report, bool include_wall_time) {
  json j;
  j["config"] = TrainConfigToJson(report.config);
  j["strategy"] = std::string(StrategyName(report.config.strategy));
  j["differentially_private"] = report.differentially_private;
  if (!report.differentially_private) {
    j["privacy_note"] =
        report.config.strategy == Strategy::kOracle
            ? "NOT-DP: mask chosen from exact gradients"
            : "NOT-DP: zero noise multiplier";
  }
  j["noise_multiplier"] = report.noise_multiplier;
  j["sample_rate"] = report.sample_rate;
  j["mean_accuracy"] = Num(report.mean_accuracy);
  j["std_accuracy"] = Num(report.std_accuracy);
  j["final_epsilon"] = Num(report.final_epsilon);
  j["delta"] = report.config.delta;
  json seeds = json::array();
  for (const SeedResult& s : report.seeds) {
    json e = json::array();
    for (const EpochRecord& r : s.epochs) e.push_back(EpochToJson(r));
    seeds.push_back({{"seed", s.seed},
                     {"accuracy", Num(s.accuracy)},
                     {"final_epsilon", Num(s.final_epsilon)},
                     {"epochs", e},
                     {"mask", MaskStatsToJson(s.mask)},
                     {"ledger", LedgerToJson(s.ledger, report.config.delta)},
                     {"audit",
                      {{"batches_drawn", s.batches_drawn},
                       {"unaccounted_batches", s.unaccounted_batches}}}});
  }
  j["seeds"] = seeds;
  if (include_wall_time) j["wall_time_seconds"] = report.wall_time_seconds;
  return j;
}

std::string_view SweepCsvHeader() {
  return "strategy,epsilon,delta,sparsity,grouping,seed,accuracy,"
         "final_epsilon,status";
}

std::vector<SweepRow> ReportRows(const RunReport& report) {
  std::vector<SweepRow> rows;
  const TrainConfig& c = report.config;
  for (const SeedResult& s : report.seeds) {
    SweepRow row;
    row.strategy = std::string(StrategyName(c.strategy));
    row.epsilon = c.target_epsilon;
    row.delta = c.delta;
    row.sparsity = c.sparsity;
    row.grouping = std::string(GroupingKindName(c.grouping));
    row.seed = s.seed;
    row.accuracy = s.accuracy;
    row.final_epsilon = s.final_epsilon;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SweepRow> FailedRows(const TrainConfig& c,
                                 const absl::Status& status) {
  std::vector<SweepRow> rows;
  for (uint64_t seed : c.seeds) {
    SweepRow row;
    row.strategy = std::string(StrategyName(c.strategy));
    row.epsilon = c.target_epsilon;
    row.delta = c.delta;
    row.sparsity = c.sparsity;
    row.grouping = std::string(GroupingKindName(c.grouping));
    row.seed = seed;
    row.status = absl::StrCat("error:", std::string(ErrorKind(status)));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string FormatSweepCsv(const std::vector<SweepRow>& rows) {
  std::string out = absl::StrCat(std::string(SweepCsvHeader()), "\n");
  for (const SweepRow& r : rows) {
    absl::StrAppend(&out, r.strategy, ",", FormatOptional(r.epsilon), ",",
                    FormatDouble(r.delta), ",", FormatDouble(r.sparsity), ",",
                    r.grouping, ",", r.seed, ",", FormatOptional(r.accuracy),
                    ",", FormatOptional(r.final_epsilon), ",", r.status, "\n");
  }
  return out;
}

absl::StatusOr<std::vector<SweepRow>> ParseSweepCsv(std::string_view input) {
  const absl::string_view text(input.data(), input.size());
  const absl::string_view header(SweepCsvHeader().data(),
                                 SweepCsvHeader().size());
  std::vector<absl::string_view> lines =
      absl::StrSplit(text, '\n', absl::SkipEmpty());
  if (lines.empty() || absl::StripTrailingAsciiWhitespace(lines[0]) != header) {
    return absl::DataLossError("sweep CSV line 1: unexpected header");
  }
  std::vector<SweepRow> rows;
  for (size_t i = 1; i < lines.size(); ++i) {
    const size_t line = i + 1;
    std::vector<absl::string_view> f =
        absl::StrSplit(absl::StripTrailingAsciiWhitespace(lines[i]), ',');
    if (f.size() != 9) {
      return absl::DataLossError(absl::StrCat(
          "sweep CSV line ", line, ": expected 9 fields, got ", f.size()));
    }
    SweepRow r;
    r.strategy = std::string(f[0]);
    ASSIGN_OR_RETURN(r.epsilon, ParseOptional(f[1], line));
    ASSIGN_OR_RETURN(std::optional<double> delta, ParseOptional(f[2], line));
    ASSIGN_OR_RETURN(std::optional<double> sparsity, ParseOptional(f[3], line));
    if (!delta || !sparsity) {
      return absl::DataLossError(
          absl::StrCat("sweep CSV line ", line, ": missing delta or sparsity"));
    }
    r.delta = *delta;
    r.sparsity = *sparsity;
    r.grouping = std::string(f[4]);
    const auto sr = std::from_chars(f[5].data(), f[5].data() + f[5].size(),
                                    r.seed);
    if (sr.ec != std::errc() || sr.ptr != f[5].data() + f[5].size()) {
      return absl::DataLossError(
          absl::StrCat("sweep CSV line ", line, ": bad seed \"", f[5], "\""));
    }
    ASSIGN_OR_RETURN(r.accuracy, ParseOptional(f[6], line));
    ASSIGN_OR_RETURN(r.final_epsilon, ParseOptional(f[7], line));
    r.status = std::string(f[8]);
    rows.push_back(std::move(r));
  }
  return rows;
}

SweepResult RunSweep(const std::vector<TrainConfig>& configs) {
  SweepResult result;
  for (const TrainConfig& c : configs) {
    absl::StatusOr<RunReport> report = RunExperiment(c);
    std::vector<SweepRow> rows =
        report.ok() ? ReportRows(*report) : FailedRows(c, report.status());
    result.rows.insert(result.rows.end(), rows.begin(), rows.end());
    result.runs.push_back(std::move(report));
  }
  return result;
}

absl::StatusOr<std::vector<TrainConfig>> ExpandSweep(const json& j) {
  if (!j.is_object()) {
    return absl::InvalidArgumentError("sweep file must be a JSON object");
  }
  if (!j.contains("grid")) {
    ASSIGN_OR_RETURN(TrainConfig c, TrainConfigFromJson(j));
    return std::vector<TrainConfig>{c};
  }
  for (const auto& item : j.items()) {
    if (item.key() != "base" && item.key() != "grid") {
      return absl::InvalidArgumentError(
          absl::StrCat("unknown sweep key \"", item.key(), "\""));
    }
  }
  const json base = j.value("base", json::object());
  const json& grid = j.at("grid");
  if (!grid.is_object()) {
    return absl::InvalidArgumentError("sweep grid must be an object");
  }
  static constexpr const char* kAxes[] = {"strategy", "epsilon", "sigma",
                                          "sparsity", "grouping"};
  for (const auto& item : grid.items()) {
    bool known = false;
    for (const char* a : kAxes) known = known || item.key() == a;
    if (!known || !item.value().is_array() || item.value().empty()) {
      return absl::InvalidArgumentError(absl::StrCat(
          "sweep grid key \"", item.key(),
          "\" must be one of strategy, epsilon, sigma, sparsity, grouping "
          "with a non-empty list"));
    }
  }
  std::vector<json> configs = {base};
  for (const char* axis : kAxes) {
    if (!grid.contains(axis)) continue;
    std::vector<json> next;
    for (const json& c : configs) {
      for (const json& v : grid.at(axis)) {
        json e = c;
        e[axis] = v;
        if (std::string_view(axis) == "epsilon") e.erase("sigma");
        if (std::string_view(axis) == "sigma") e.erase("epsilon");
        next.push_back(std::move(e));
      }
    }
    configs = std::move(next);
  }
  std::vector<TrainConfig> out;
  for (const json& c : configs) {
    ASSIGN_OR_RETURN(TrainConfig tc, TrainConfigFromJson(c));
    out.push_back(std::move(tc));
  }
  return out;
}

}  // namespace dpsparse
