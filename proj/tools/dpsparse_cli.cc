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

// dpsparse command-line driver: run, sweep, calibrate, inspect-mask.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "dpsparse/accountant.h"
#include "dpsparse/config.h"
#include "dpsparse/experiment.h"
#include "dpsparse/persistence.h"
#include "dpsparse/report.h"
#include "dpsparse/status_macros.h"
#include "json.hpp"

namespace dpsparse {
namespace {

using nlohmann::json;

struct Overrides {
  std::string config_path;
  std::string strategy;
  std::optional<double> epsilon;
  std::optional<double> delta;
  std::optional<double> sigma;
  std::optional<double> sparsity;
  std::string grouping;
  std::vector<uint64_t> seeds;
  std::string out_dir;
};

void AddCommonFlags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--strategy", o.strategy,
                  "sparta|dpsgd-grad|oracle|mp|random|last|bitfit|all");
  cmd->add_option("--epsilon", o.epsilon, "target epsilon");
  cmd->add_option("--delta", o.delta, "target delta");
  cmd->add_option("--sigma", o.sigma, "noise multiplier (skips calibration)");
  cmd->add_option("--sparsity", o.sparsity, "fraction of groups per layer");
  cmd->add_option("--grouping", o.grouping, "row|singleton|random");
  cmd->add_option("--seed", o.seeds, "seed; repeat for several");
  cmd->add_option("--out-dir", o.out_dir, "directory for output files");
}

absl::Status Apply(const Overrides& o, TrainConfig& c) {
  if (o.epsilon && o.sigma) {
    return absl::InvalidArgumentError("--epsilon and --sigma are exclusive");
  }
  if (!o.strategy.empty()) {
    ASSIGN_OR_RETURN(c.strategy, ParseStrategy(o.strategy));
  }
  if (!o.grouping.empty()) {
    ASSIGN_OR_RETURN(c.grouping, ParseGroupingKind(o.grouping));
  }
  if (o.epsilon) {
    c.target_epsilon = *o.epsilon;
    c.sigma.reset();
  }
  if (o.sigma) {
    c.sigma = *o.sigma;
    c.target_epsilon.reset();
  }
  if (o.delta) c.delta = *o.delta;
  if (o.sparsity) c.sparsity = *o.sparsity;
  if (!o.seeds.empty()) c.seeds = o.seeds;
  return c.Validate();
}

absl::StatusOr<TrainConfig> LoadConfig(const Overrides& o) {
  TrainConfig c;
  if (!o.config_path.empty()) {
    ASSIGN_OR_RETURN(c, LoadTrainConfig(o.config_path));
  }
  RETURN_IF_ERROR(Apply(o, c));
  return c;
}

absl::Status PrepareOutDir(const std::string& dir) {
  if (dir.empty()) return absl::OkStatus();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    return absl::PermissionDeniedError(
        absl::StrCat("cannot create ", dir, ": ", ec.message()));
  }
  return absl::OkStatus();
}

std::string OutPath(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

absl::Status WriteJson(const std::string& path, const json& j) {
  return WriteFileBytes(path, j.dump(2) + "\n");
}

absl::Status CmdRun(const Overrides& o) {
  ASSIGN_OR_RETURN(TrainConfig config, LoadConfig(o));
  RETURN_IF_ERROR(PrepareOutDir(o.out_dir));
  SeedCallback on_seed;
  if (!o.out_dir.empty()) {
    on_seed = [&](const SeedResult& r, const SeedArtifacts& a) -> absl::Status {
      const std::string tag = absl::StrCat("seed", r.seed);
      RETURN_IF_ERROR(WriteFileBytes(
          OutPath(o.out_dir, absl::StrCat("params_", tag, ".bin")),
          SerializeParams(a.final_params)));
      if (!a.mask) return absl::OkStatus();
      MaskMetadata meta{std::string(StrategyName(config.strategy)),
                        config.sparsity, r.seed, config.delta, r.ledger};
      return WriteFileBytes(
          OutPath(o.out_dir, absl::StrCat("mask_", tag, ".dpsmask")),
          SerializeMask(*a.mask, meta));
    };
  }
  ASSIGN_OR_RETURN(RunReport report, RunExperiment(config, on_seed));
  const json j = RunReportToJson(report);
  if (!o.out_dir.empty()) {
    RETURN_IF_ERROR(WriteJson(OutPath(o.out_dir, "report.json"), j));
  }
  std::cout << j.dump(2) << "\n";
  return absl::OkStatus();
}

absl::Status CmdSweep(const Overrides& o) {
  if (o.config_path.empty()) {
    return absl::InvalidArgumentError("sweep needs --config <sweep file>");
  }
  ASSIGN_OR_RETURN(std::string text, ReadFileBytes(o.config_path));
  json spec;
  try {
    spec = json::parse(text);
  } catch (const json::parse_error& e) {
    return absl::DataLossError(absl::StrCat(o.config_path, ": byte offset ",
                                            e.byte, ": ", e.what()));
  }
  ASSIGN_OR_RETURN(std::vector<TrainConfig> configs, ExpandSweep(spec));
  // Flags apply to every run except on the axes the grid sweeps.
  Overrides fixed = o;
  if (spec.contains("grid")) {
    const json& grid = spec.at("grid");
    if (grid.contains("strategy")) fixed.strategy.clear();
    if (grid.contains("grouping")) fixed.grouping.clear();
    if (grid.contains("sparsity")) fixed.sparsity.reset();
    if (grid.contains("epsilon") || grid.contains("sigma")) {
      fixed.epsilon.reset();
      fixed.sigma.reset();
    }
  }
  for (TrainConfig& c : configs) RETURN_IF_ERROR(Apply(fixed, c));
  RETURN_IF_ERROR(PrepareOutDir(o.out_dir));
  SweepResult result = RunSweep(configs);
  const std::string csv = FormatSweepCsv(result.rows);
  size_t failed = 0;
  for (size_t i = 0; i < result.runs.size(); ++i) {
    if (!result.runs[i].ok()) ++failed;
    if (o.out_dir.empty()) continue;
    const json j = result.runs[i].ok() ? RunReportToJson(*result.runs[i])
                                       : ErrorToJson(result.runs[i].status());
    RETURN_IF_ERROR(WriteJson(
        OutPath(o.out_dir, absl::StrCat("run_", i, ".json")), j));
  }
  if (!o.out_dir.empty()) {
    RETURN_IF_ERROR(WriteFileBytes(OutPath(o.out_dir, "sweep.csv"), csv));
  }
  std::cout << csv;
  if (failed > 0) {
    return absl::AbortedError(absl::StrCat(failed, " of ", result.runs.size(),
                                           " sweep runs failed"));
  }
  return absl::OkStatus();
}

absl::Status CmdCalibrate(const Overrides& o) {
  ASSIGN_OR_RETURN(TrainConfig config, LoadConfig(o));
  if (!config.target_epsilon) {
    return absl::InvalidArgumentError("calibrate needs --epsilon");
  }
  ASSIGN_OR_RETURN(size_t n, TrainSetSize(config.data));
  ASSIGN_OR_RETURN(double sigma, ResolveNoiseMultiplier(config, n));
  const PrivacyLedger ledger = PlannedLedger(config, n, sigma);
  json j = {{"strategy", std::string(StrategyName(config.strategy))},
            {"target_epsilon", *config.target_epsilon},
            {"noise_multiplier", sigma},
            {"dataset_size", n},
            {"ledger", LedgerToJson(ledger, config.delta)}};
  if (!o.out_dir.empty()) {
    RETURN_IF_ERROR(PrepareOutDir(o.out_dir));
    RETURN_IF_ERROR(WriteJson(OutPath(o.out_dir, "calibration.json"), j));
  }
  std::cout << j.dump(2) << "\n";
  return absl::OkStatus();
}

absl::Status CmdInspectMask(const std::string& path) {
  ASSIGN_OR_RETURN(std::string bytes, ReadFileBytes(path));
  ASSIGN_OR_RETURN(LoadedMask loaded, ParseMask(bytes));
  const Mask& mask = loaded.mask;
  const Grouping& g = *mask.grouping();
  const ParamLayout& layout = mask.layout();
  json layers = json::array();
  const std::vector<double> density = mask.LayerDensity();
  for (size_t l = 0; l < g.num_layers(); ++l) {
    layers.push_back(
        {{"name", layout.segment(layout.maskable_segments()[l]).name},
         {"groups", g.layer_end(l) - g.layer_begin(l)},
         {"selected", mask.selected_groups_in_layer(l)},
         {"density", density[l]}});
  }
  json out = loaded.header;
  out.erase("segments");
  out["summary"] = {{"selected_groups", mask.selected_groups()},
                    {"trainable_weights", mask.trainable_weights()},
                    {"trainable_coordinates", mask.trainable_coordinates()},
                    {"layers", layers}};
  out["feasible"] =
      mask.CheckFeasible(SparsityBudget{loaded.metadata.sparsity}).ok();
  std::cout << out.dump(2) << "\n";
  return absl::OkStatus();
}

int ExitCode(const absl::Status& s) {
  switch (s.code()) {
    case absl::StatusCode::kOk:
      return 0;
    case absl::StatusCode::kInvalidArgument:
      return 2;
    case absl::StatusCode::kDataLoss:
    case absl::StatusCode::kNotFound:
    case absl::StatusCode::kPermissionDenied:
      return 3;
    case absl::StatusCode::kFailedPrecondition:
      return 4;
    case absl::StatusCode::kOutOfRange:
      return 5;
    case absl::StatusCode::kAborted:
      return 6;
    default:
      return 1;
  }
}

int Fail(const absl::Status& s) {
  std::cerr << ErrorToJson(s).dump() << "\n";
  return ExitCode(s);
}

}  // namespace
}  // namespace dpsparse

int main(int argc, char** argv) {
  using namespace dpsparse;
  CLI::App app{"Differentially private sparse fine-tuning"};
  app.require_subcommand(1);
  Overrides run_o, sweep_o, cal_o;
  std::string mask_path;
  CLI::App* run = app.add_subcommand("run", "train one configuration");
  AddCommonFlags(run, run_o);
  CLI::App* sweep = app.add_subcommand("sweep", "run a grid of configurations");
  AddCommonFlags(sweep, sweep_o);
  CLI::App* cal =
      app.add_subcommand("calibrate", "noise multiplier for a target epsilon");
  AddCommonFlags(cal, cal_o);
  CLI::App* inspect = app.add_subcommand("inspect-mask", "describe a mask file");
  inspect->add_option("mask", mask_path, "mask file")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return Fail(absl::InvalidArgumentError(e.what()));
  }
  absl::Status status;
  try {
    if (run->parsed()) status = CmdRun(run_o);
    if (sweep->parsed()) status = CmdSweep(sweep_o);
    if (cal->parsed()) status = CmdCalibrate(cal_o);
    if (inspect->parsed()) status = CmdInspectMask(mask_path);
  } catch (const std::exception& e) {
    status = absl::InternalError(e.what());
  }
  return status.ok() ? 0 : Fail(status);
}
