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

#include "dpsparse/experiment.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>

#include "absl/strings/str_cat.h"
#include "dpsparse/config.h"
#include "dpsparse/kernels.h"
#include "dpsparse/rng.h"
#include "dpsparse/status_macros.h"

namespace dpsparse {
namespace {

constexpr double kDeadBias = -1e3;

struct LoadedData {
  std::optional<Dataset> pretrain;
  Dataset train;
  Dataset test;
  std::vector<size_t> planted_dims;
};

absl::Status Normalize(Dataset& train, Dataset& test) {
  ASSIGN_OR_RETURN(NormStats stats, FitNormalization(train.features));
  RETURN_IF_ERROR(ApplyNormalization(stats, train));
  return ApplyNormalization(stats, test);
}

absl::StatusOr<LoadedData> LoadData(const DataConfig& config) {
  LoadedData out;
  switch (config.source) {
    case DataSource::kSynthetic: {
      ASSIGN_OR_RETURN(TransferTask task,
                       SynthTransferTask(config.synth, config.seed));
      out.pretrain = std::move(task.pretrain);
      out.train = std::move(task.train);
      out.test = std::move(task.test);
      out.planted_dims = std::move(task.planted_dims);
      return out;
    }
    case DataSource::kIdx: {
      ASSIGN_OR_RETURN(out.train, LoadIdx(config.train_images,
                                          config.train_labels,
                                          Split::kFinetuneTrain));
      ASSIGN_OR_RETURN(out.test, LoadIdx(config.test_images, config.test_labels,
                                         Split::kFinetuneTest));
      if (!config.pretrain_images.empty()) {
        ASSIGN_OR_RETURN(Dataset pre, LoadIdx(config.pretrain_images,
                                              config.pretrain_labels,
                                              Split::kPretrain));
        out.pretrain = std::move(pre);
      }
      break;
    }
    case DataSource::kCsv: {
      ASSIGN_OR_RETURN(out.train,
                       LoadCsv(config.train_csv, Split::kFinetuneTrain));
      ASSIGN_OR_RETURN(out.test, LoadCsv(config.test_csv, Split::kFinetuneTest));
      if (!config.pretrain_csv.empty()) {
        ASSIGN_OR_RETURN(Dataset pre,
                         LoadCsv(config.pretrain_csv, Split::kPretrain));
        out.pretrain = std::move(pre);
      }
      break;
    }
  }
  if (out.train.dim() != out.test.dim()) {
    return absl::InvalidArgumentError("train and test feature counts differ");
  }
  const int classes = std::max(out.train.num_classes, out.test.num_classes);
  out.train.num_classes = out.test.num_classes = classes;
  RETURN_IF_ERROR(Normalize(out.train, out.test));
  if (out.pretrain) {
    if (out.pretrain->dim() != out.train.dim()) {
      return absl::InvalidArgumentError(
          "pretrain and finetune feature counts differ");
    }
    ASSIGN_OR_RETURN(NormStats stats, FitNormalization(out.pretrain->features));
    RETURN_IF_ERROR(ApplyNormalization(stats, *out.pretrain));
  }
  return out;
}

// Plain minibatch SGD with momentum on public data.
ParamVector Pretrain(const Model& model, const Dataset& data,
                     const PretrainConfig& config, uint64_t seed) {
  ParamVector params = model.Init(seed);
  std::vector<double> velocity(params.dim(), 0.0);
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(seed, RngStream::kPretrain);
  const size_t bs = std::max<size_t>(1, config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.Below(i)]);
    }
    for (size_t start = 0; start < order.size(); start += bs) {
      const size_t end = std::min(order.size(), start + bs);
      const Batch batch = MakeBatch(
          data, std::span<const size_t>(order.data() + start, end - start));
      const ClippedSum sum = ClippedGradientSumParallel(model, params, batch, {});
      const double scale = 1.0 / static_cast<double>(end - start);
      std::span<double> w = params.values();
      for (size_t j = 0; j < w.size(); ++j) {
        velocity[j] = config.momentum * velocity[j] + sum.sum[j] * scale;
        w[j] -= config.lr * velocity[j];
      }
    }
  }
  return params;
}

// Copies every non-head segment by name.
void TransferBody(const ParamVector& from, ParamVector& to) {
  for (size_t s = 0; s < to.layout().num_segments(); ++s) {
    const Segment& seg = to.layout().segment(s);
    if (seg.classifier_head) continue;
    const int src = from.layout().Find(seg.name);
    if (src < 0 || from.layout().segment(src).size() != seg.size()) continue;
    std::span<const double> v = from.segment(src);
    std::copy(v.begin(), v.end(), to.segment(s).begin());
  }
}

std::string CacheKey(const TrainConfig& c) {
  nlohmann::json j = TrainConfigToJson(c);
  nlohmann::json key;
  key["model"] = j["model"];
  key["data"] = j["data"];
  key["pretrain"] = j["pretrain"];
  key["planted_units"] = j["planted_units"];
  return key.dump();
}

std::mutex& CacheMutex() {
  static std::mutex mu;
  return mu;
}

std::map<std::string, std::shared_ptr<const PreparedTask>>& Cache() {
  static auto* cache =
      new std::map<std::string, std::shared_ptr<const PreparedTask>>();
  return *cache;
}

absl::Status PlantUnits(const TrainConfig& config, PreparedTask& task) {
  const ParamLayout& layout = task.pretrained.layout();
  const int w_seg = layout.Find("fc1.weight");
  const int b_seg = layout.Find("fc1.bias");
  if (w_seg < 0 || b_seg < 0 || task.model.spec().conv) {
    return absl::InvalidArgumentError(
        "planted_units needs a dense first hidden layer and no conv layer");
  }
  const Segment& seg = layout.segment(w_seg);
  const size_t units = seg.rows;
  const size_t live = std::max<size_t>(
      1, static_cast<size_t>(std::lround(config.planted_units * units)));
  std::vector<size_t> order(units);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(config.data.seed ^ 0x5eedULL, RngStream::kSelection);
  for (size_t i = 0; i < live; ++i) {
    std::swap(order[i], order[i + rng.Below(units - i)]);
  }
  std::vector<uint8_t> alive(units, 0);
  for (size_t i = 0; i < live; ++i) alive[order[i]] = 1;
  std::span<double> bias = task.pretrained.segment(b_seg);
  for (size_t u = 0; u < units; ++u) {
    if (!alive[u]) bias[u] = kDeadBias;
  }
  task.planted_truth.assign(layout.maskable_dim(), 0);
  const size_t base = layout.maskable_offset(w_seg);
  for (size_t u = 0; u < units; ++u) {
    if (!alive[u]) continue;
    std::fill_n(task.planted_truth.begin() + base + u * seg.cols, seg.cols, 1);
  }
  return absl::OkStatus();
}

double Mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double SampleStd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = Mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double SampleRate(const TrainConfig& config, size_t dataset_size) {
  return std::min(1.0, static_cast<double>(config.batch_size) /
                           static_cast<double>(dataset_size));
}

// Ledger the schedule of `config` produces at training noise `sigma`.
PrivacyLedger ScheduleLedger(const TrainConfig& config, double q,
                             double sigma) {
  DpSgdConfig dp = config.dp;
  dp.sample_rate = q;
  const uint64_t per_epoch = dp.batches_per_epoch();
  PrivacyLedger ledger;
  if (UsesScoringEpoch(config.strategy)) {
    if (dp.mask_epoch > 0) ledger.Record(q, sigma, per_epoch * dp.mask_epoch);
    if (config.strategy != Strategy::kOracle) {
      const double scoring = dp.mask_noise_multiplier < 0.0
                                 ? sigma
                                 : dp.mask_noise_multiplier;
      ledger.Record(q, scoring, per_epoch);
    }
    const int rest = dp.epochs - dp.mask_epoch - 1;
    if (rest > 0) ledger.Record(q, sigma, per_epoch * rest);
  } else {
    ledger.Record(q, sigma, per_epoch * dp.epochs);
  }
  return ledger;
}

}  // namespace

std::string_view StrategyName(Strategy strategy) {
  switch (strategy) {
    case Strategy::kSparta:
      return "sparta";
    case Strategy::kDpSgdGrad:
      return "dpsgd-grad";
    case Strategy::kOracle:
      return "oracle";
    case Strategy::kMagnitude:
      return "mp";
    case Strategy::kRandom:
      return "random";
    case Strategy::kLast:
      return "last";
    case Strategy::kBitFit:
      return "bitfit";
    case Strategy::kAll:
      return "all";
  }
  return "unknown";
}

absl::StatusOr<Strategy> ParseStrategy(std::string_view name) {
  for (Strategy s : {Strategy::kSparta, Strategy::kDpSgdGrad, Strategy::kOracle,
                     Strategy::kMagnitude, Strategy::kRandom, Strategy::kLast,
                     Strategy::kBitFit, Strategy::kAll}) {
    if (StrategyName(s) == name) return s;
  }
  return absl::InvalidArgumentError(absl::StrCat(
      "unknown strategy \"", std::string(name),
      "\" (expected sparta, dpsgd-grad, oracle, mp, random, last, bitfit or "
      "all)"));
}

bool UsesScoringEpoch(Strategy strategy) {
  return strategy == Strategy::kSparta || strategy == Strategy::kDpSgdGrad ||
         strategy == Strategy::kOracle;
}

absl::Status TrainConfig::Validate() const {
  if (target_epsilon.has_value() == sigma.has_value()) {
    return absl::InvalidArgumentError(
        "exactly one of a target epsilon or an explicit sigma is required");
  }
  if (target_epsilon && !(*target_epsilon > 0.0)) {
    return absl::InvalidArgumentError("target epsilon must be > 0");
  }
  if (sigma && (!(*sigma >= 0.0) || std::isinf(*sigma))) {
    return absl::InvalidArgumentError("sigma must be finite and >= 0");
  }
  if (!(delta > 0.0 && delta < 1.0)) {
    return absl::InvalidArgumentError("delta must lie in (0, 1)");
  }
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) {
    return absl::InvalidArgumentError("sparsity must lie in [0, 1]");
  }
  if (batch_size == 0) return absl::InvalidArgumentError("batch_size must be > 0");
  if (seeds.empty()) return absl::InvalidArgumentError("seeds must be non-empty");
  if (grouping == GroupingKind::kRandomBlocks && block_size == 0) {
    return absl::InvalidArgumentError("random grouping needs block_size > 0");
  }
  if (!(planted_units >= 0.0 && planted_units <= 1.0)) {
    return absl::InvalidArgumentError("planted_units must lie in [0, 1]");
  }
  if (stacked_updates && grouping != GroupingKind::kRow) {
    return absl::InvalidArgumentError("stacked_updates requires row grouping");
  }
  if (pretrain.epochs < 0) {
    return absl::InvalidArgumentError("pretrain.epochs must be >= 0");
  }
  DpSgdConfig dp_check = dp;
  dp_check.sample_rate = 1.0;
  dp_check.noise_multiplier = 0.0;
  return dp_check.Validate();
}

absl::StatusOr<std::shared_ptr<const PreparedTask>> PrepareTask(
    const TrainConfig& config) {
  const std::string key = CacheKey(config);
  {
    std::lock_guard<std::mutex> lock(CacheMutex());
    auto it = Cache().find(key);
    if (it != Cache().end()) return it->second;
  }
  ASSIGN_OR_RETURN(LoadedData data, LoadData(config.data));
  ModelSpec spec = config.model;
  spec.input_dim = data.train.dim();
  spec.num_classes = static_cast<size_t>(data.train.num_classes);
  ASSIGN_OR_RETURN(Model model, Model::Create(spec));

  ParamVector params = model.Init(config.data.seed);
  if (data.pretrain && config.pretrain.epochs > 0) {
    ModelSpec pre_spec = spec;
    pre_spec.num_classes = static_cast<size_t>(data.pretrain->num_classes);
    ASSIGN_OR_RETURN(Model pre_model, Model::Create(pre_spec));
    const ParamVector pre =
        Pretrain(pre_model, *data.pretrain, config.pretrain, config.data.seed);
    TransferBody(pre, params);
  }
  auto task = std::make_shared<PreparedTask>(PreparedTask{
      .model = std::move(model),
      .train = std::move(data.train),
      .test = std::move(data.test),
      .pretrained = std::move(params),
      .planted_truth = {}});
  if (config.planted_units > 0.0) RETURN_IF_ERROR(PlantUnits(config, *task));

  std::lock_guard<std::mutex> lock(CacheMutex());
  Cache().emplace(key, task);
  return std::shared_ptr<const PreparedTask>(task);
}

PrivacyLedger PlannedLedger(const TrainConfig& config, size_t dataset_size,
                            double sigma) {
  return ScheduleLedger(config, SampleRate(config, dataset_size), sigma);
}

absl::StatusOr<size_t> TrainSetSize(const DataConfig& config) {
  if (config.source == DataSource::kSynthetic) {
    RETURN_IF_ERROR(config.synth.Validate());
    return config.synth.n_train;
  }
  ASSIGN_OR_RETURN(LoadedData data, LoadData(config));
  return data.train.size();
}

absl::StatusOr<double> ResolveNoiseMultiplier(const TrainConfig& config,
                                              size_t dataset_size) {
  if (config.sigma) return *config.sigma;
  const double q = SampleRate(config, dataset_size);
  // The oracle trains at SPARTA's noise level so only the mask differs; its
  // unaccounted scoring epoch is still reported.
  TrainConfig schedule = config;
  if (schedule.strategy == Strategy::kOracle) {
    schedule.strategy = Strategy::kSparta;
  }
  absl::StatusOr<double> sigma = CalibrateNoise(
      [&](double s) { return ScheduleLedger(schedule, q, s); },
      *config.target_epsilon, config.delta);
  if (!sigma.ok()) {
    return absl::FailedPreconditionError(
        absl::StrCat("calibration failed: ", sigma.status().message()));
  }
  return sigma;
}

absl::StatusOr<SeedResult> RunSeed(const TrainConfig& config,
                                   const PreparedTask& task, double sigma,
                                   uint64_t seed, const RunOptions& options,
                                   SeedArtifacts* artifacts) {
  const Model& model = task.model;
  const Dataset& train = task.train;
  const size_t n = train.size();
  DpSgdConfig dp = config.dp;
  dp.sample_rate = SampleRate(config, n);
  dp.noise_multiplier = sigma;
  RETURN_IF_ERROR(dp.Validate());

  ParamVector params = task.pretrained;
  model.ReinitializeHead(params, seed);
  const ParamVector w_old = params;
  const std::shared_ptr<const ParamLayout>& layout = params.layout_ptr();
  ASSIGN_OR_RETURN(Grouping grouping_value,
                   Grouping::Make(config.grouping, *layout, config.block_size,
                                  seed));
  auto grouping = std::make_shared<const Grouping>(std::move(grouping_value));
  const SparsityBudget budget{config.sparsity};

  PoissonSampler sampler(n, dp.sample_rate, CounterRng(seed, RngStream::kSampler));
  CounterRng noise_rng(seed, RngStream::kNoise);
  CounterRng scoring_rng(seed, RngStream::kScoring);
  CounterRng selection_rng(seed, RngStream::kSelection);
  PrivacyLedger ledger;
  MomentumState momentum;
  SeedResult result;
  result.seed = seed;

  const size_t per_epoch = dp.batches_per_epoch();
  const size_t total_steps = per_epoch * static_cast<size_t>(dp.epochs);
  size_t step = 0;
  double last_lr = 0.0;

  auto record_epoch = [&](int epoch, std::string phase,
                          double loss) -> absl::Status {
    ASSIGN_OR_RETURN(double acc, Evaluate(model, params, task.test));
    ASSIGN_OR_RETURN(double eps, Epsilon(ledger, config.delta));
    result.epochs.push_back({epoch, std::move(phase), loss, acc, eps, last_lr});
    return absl::OkStatus();
  };

  auto train_epoch = [&](const Mask* mask, int epoch,
                         const char* phase) -> absl::Status {
    std::span<const uint8_t> filter;
    if (mask != nullptr) filter = mask->coordinate_filter();
    const bool stacked = config.stacked_updates && mask != nullptr &&
                         mask->grouping()->kind() == GroupingKind::kRow;
    double loss_sum = 0.0;
    size_t seen = 0;
    for (size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::vector<size_t> ids = sampler.Next();
      const Batch batch = MakeBatch(train, ids);
      ClipOptions clip;
      clip.clip = dp.clip;
      clip.coordinate_filter = filter;
      ClippedSum sum;
      if (batch.size() > 0) {
        sum = ClippedGradientSumParallel(model, params, batch, clip);
      } else {
        sum.sum.assign(params.dim(), 0.0);
      }
      loss_sum += sum.loss_sum;
      seen += batch.size();
      const ParamVector grad = PrivatizeSum(std::move(sum.sum), layout, dp, n,
                                            filter, noise_rng, ledger);
      const double factor = LearningRateFactor(dp, step, total_steps);
      last_lr = dp.lr * factor;
      if (stacked) {
        ASSIGN_OR_RETURN(params,
                         StackedStep(params, grad, *mask, dp, factor, momentum));
      } else {
        RETURN_IF_ERROR(Step(params, grad, mask, dp, factor, momentum));
      }
    }
    if (!params.AllFinite()) {
      return absl::OutOfRangeError(
          absl::StrCat("parameters became non-finite in epoch ", epoch));
    }
    return record_epoch(epoch, phase,
                        seen == 0 ? 0.0 : loss_sum / static_cast<double>(seen));
  };

  auto phase_mask = [&](const Mask& mask) -> const Mask* {
    if (options.dense_when_full &&
        mask.selected_groups() == grouping->num_groups() &&
        mask.trainable_kinds() == TrainableKinds{}) {
      return nullptr;
    }
    return &mask;
  };

  std::optional<Mask> final_mask;
  if (UsesScoringEpoch(config.strategy)) {
    const Mask bitfit = SelectMaskBitFit(layout, grouping);
    for (int e = 0; e < dp.mask_epoch; ++e) {
      RETURN_IF_ERROR(train_epoch(&bitfit, e, "bitfit"));
    }
    const ScoringContext ctx{model, params, train, dp, sampler, scoring_rng,
                             ledger};
    absl::StatusOr<Mask> selected = absl::InternalError("unset");
    switch (config.strategy) {
      case Strategy::kSparta:
        selected = SelectMaskSparta(ctx, grouping, budget);
        break;
      case Strategy::kDpSgdGrad:
        selected = SelectMaskDpSgdGradients(ctx, budget);
        break;
      default:
        selected = SelectMaskOracle(ctx, grouping, budget, config.oracle_score);
        break;
    }
    if (!selected.ok()) return selected.status();
    final_mask = std::move(*selected);
    step += per_epoch;
    RETURN_IF_ERROR(record_epoch(dp.mask_epoch, "scoring", 0.0));
    momentum.Reset();
    const Mask* active = phase_mask(*final_mask);
    for (int e = dp.mask_epoch + 1; e < dp.epochs; ++e) {
      RETURN_IF_ERROR(train_epoch(active, e, "masked"));
    }
  } else {
    switch (config.strategy) {
      case Strategy::kMagnitude: {
        ASSIGN_OR_RETURN(Mask m, SelectMaskMagnitude(w_old, grouping, budget));
        final_mask = std::move(m);
        break;
      }
      case Strategy::kRandom:
        final_mask = SelectMaskRandom(layout, grouping, budget, selection_rng);
        break;
      case Strategy::kLast:
        final_mask = SelectMaskLastLayer(layout, grouping);
        break;
      case Strategy::kBitFit:
        final_mask = SelectMaskBitFit(layout, grouping);
        break;
      default:
        break;
    }
    const Mask* active = final_mask ? phase_mask(*final_mask) : nullptr;
    for (int e = 0; e < dp.epochs; ++e) {
      RETURN_IF_ERROR(train_epoch(active, e, final_mask ? "masked" : "train"));
    }
  }

  ASSIGN_OR_RETURN(result.accuracy, Evaluate(model, params, task.test));
  ASSIGN_OR_RETURN(result.final_epsilon, Epsilon(ledger, config.delta));
  result.batches_drawn = sampler.batches_drawn();
  result.unaccounted_batches = result.batches_drawn - ledger.total_steps();
  result.ledger = ledger;

  MaskStats& stats = result.mask;
  for (size_t seg : layout->maskable_segments()) {
    stats.layers.push_back(layout->segment(seg).name);
  }
  if (final_mask) {
    stats.layer_density = final_mask->LayerDensity();
    stats.selected_groups = final_mask->selected_groups();
    stats.trainable_weights = final_mask->trainable_weights();
    stats.trainable_coordinates = final_mask->trainable_coordinates();
    if (!task.planted_truth.empty()) {
      stats.planted_overlap = MaskOverlap(*final_mask, task.planted_truth);
    }
  } else {
    stats.layer_density.assign(stats.layers.size(), 1.0);
    stats.selected_groups = grouping->num_groups();
    stats.trainable_weights = layout->maskable_dim();
    stats.trainable_coordinates = layout->dim();
  }

  if (artifacts != nullptr) {
    artifacts->initial = w_old;
    artifacts->final_params = params;
    artifacts->mask = std::move(final_mask);
  }
  return result;
}

absl::StatusOr<RunReport> RunExperiment(const TrainConfig& config,
                                        const SeedCallback& on_seed) {
  const auto start = std::chrono::steady_clock::now();
  RETURN_IF_ERROR(config.Validate());
  ASSIGN_OR_RETURN(std::shared_ptr<const PreparedTask> task,
                   PrepareTask(config));
  RunReport report;
  report.config = config;
  report.sample_rate = SampleRate(config, task->train.size());
  ASSIGN_OR_RETURN(report.noise_multiplier,
                   ResolveNoiseMultiplier(config, task->train.size()));
  report.differentially_private =
      config.strategy != Strategy::kOracle && report.noise_multiplier > 0.0;
  std::vector<double> accuracies;
  for (uint64_t seed : config.seeds) {
    SeedArtifacts artifacts;
    ASSIGN_OR_RETURN(SeedResult r, RunSeed(config, *task, report.noise_multiplier,
                                           seed, {}, &artifacts));
    if (on_seed) RETURN_IF_ERROR(on_seed(r, artifacts));
    accuracies.push_back(r.accuracy);
    report.seeds.push_back(std::move(r));
  }
  report.mean_accuracy = Mean(accuracies);
  report.std_accuracy = SampleStd(accuracies);
  report.final_epsilon = report.seeds.front().final_epsilon;
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

}  // namespace dpsparse
