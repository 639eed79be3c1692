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

// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "dpsparse/accountant.h"
#include "dpsparse/dp_engine.h"
#include "dpsparse/experiment.h"
#include "dpsparse/kernels.h"
#include "dpsparse/mask_selection.h"
#include "oracles.h"
#include "test_util.h"

namespace dpsparse {
namespace {

using testing::MakeModel;
using testing::PlantedConfig;
using testing::TinyConfig;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double Mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double StdErr(const std::vector<double>& v) {
  const double m = Mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1) / v.size());
}

// ---------------------------------------------------------------- 1

Outcome GradientCorrectness() {
  constexpr int kInstances = 100;
  constexpr double kTol = 1e-4;
  constexpr double kStep = 1e-5;
  // A conv layer, two dense layers with gains, and the head cover every
  // layer kind.
  const char* kKinds[] = {"conv", "dense", "bias", "norm-scale", "head"};
  auto kind_of = [](const Segment& s) -> int {
    if (s.classifier_head) return 4;
    if (s.kind == SegmentKind::kBias) return 2;
    if (s.kind == SegmentKind::kNormScale) return 3;
    return s.name.rfind("conv", 0) == 0 ? 0 : 1;
  };
  std::vector<double> worst(5, 0.0);
  std::vector<int> counted(5, 0);
  int redraws = 0;
  uint64_t seed = 0;
  for (int inst = 0; inst < kInstances; ++seed) {
    CounterRng rng(seed, 31);
    ModelSpec spec;
    const size_t channels = 1 + rng.Below(2);
    const size_t length = 5 + rng.Below(4);
    spec.input_dim = channels * length;
    spec.conv = ConvSpec{channels, 2 + rng.Below(3), 2 + rng.Below(2)};
    spec.hidden = {4 + rng.Below(5), 3 + rng.Below(4)};
    spec.num_classes = 2 + rng.Below(4);
    spec.norm_scale = true;
    const Model model = MakeModel(spec);
    const ParamVector p = testing::RandomParams(model, seed);
    const Batch b = testing::RandomBatch(1, spec.input_dim,
                                         static_cast<int>(spec.num_classes),
                                         seed);
    // Finite differences are meaningless across a ReLU kink.
    if (oracle::MinAbsPreActivation(spec, p, b.inputs.row(0)) < 1e-3) {
      ++redraws;
      continue;
    }
    absl::StatusOr<std::vector<ParamVector>> g = PerSampleGrad(model, p, b);
    if (!g.ok()) return {false, g.status().ToString()};
    const std::vector<double> fd = oracle::FiniteDifferenceGradient(
        spec, p, b.inputs.row(0), b.labels[0], kStep);
    std::vector<std::vector<double>> a(5), f(5);
    for (const Segment& s : model.layout()->segments()) {
      const int k = kind_of(s);
      for (size_t j = s.offset; j < s.offset + s.size(); ++j) {
        a[k].push_back((*g)[0][j]);
        f[k].push_back(fd[j]);
      }
    }
    for (int k = 0; k < 5; ++k) {
      worst[k] = std::max(worst[k], oracle::RelativeError(a[k], f[k]));
      ++counted[k];
    }
    ++inst;
  }
  bool pass = true;
  std::string detail;
  for (int k = 0; k < 5; ++k) {
    pass = pass && worst[k] <= kTol && counted[k] >= kInstances;
    absl::StrAppendFormat(&detail, "%s %.1e, ", kKinds[k], worst[k]);
  }
  absl::StrAppendFormat(&detail,
                        "worst rel err per kind (tol %.0e, %d instances each, "
                        "%d kink redraws)",
                        kTol, kInstances, redraws);
  return {pass, detail};
}

// ---------------------------------------------------------------- 2

Outcome AccountantCorrectness() {
  std::string detail;
  bool pass = true;
  PrivacyLedger ledger;
  ledger.Record(0.01, 1.0, 5000);
  absl::StatusOr<double> eps = Epsilon(ledger, 1e-5);
  const std::vector<double> alphas = DefaultAlphaGrid();
  const double want = oracle::EpsilonQuadrature(0.01, 1.0, 5000, 1e-5, alphas);
  const double rel = eps.ok() ? std::abs(*eps - want) / want : 1.0;
  pass = pass && rel <= 0.02;
  absl::StrAppendFormat(&detail, "eps %.4f vs oracle %.4f (rel %.1e <= 2e-2); ",
                        eps.value_or(-1), want, rel);

  double closed_err = 0.0;
  for (double sigma : {0.5, 1.0, 2.0, 7.3}) {
    for (double alpha : alphas) {
      absl::StatusOr<double> r = RdpOfSgm(1.0, sigma, alpha);
      const double exact = alpha / (2.0 * sigma * sigma);
      closed_err = std::max(closed_err,
                            r.ok() ? std::abs(*r - exact) / exact : 1.0);
    }
  }
  pass = pass && closed_err <= 1e-15;
  absl::StrAppendFormat(&detail, "q=1 closed form rel err %.1e; ", closed_err);

  const double qs[] = {0.005, 0.02, 0.08};
  const uint64_t steps[] = {100, 1000, 5000};
  const double sigmas[] = {0.8, 1.5, 3.0};
  const double deltas[] = {1e-7, 1e-5, 1e-3};
  double grid[3][3][3][3];
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 3; ++d) {
          PrivacyLedger l;
          l.Record(qs[a], sigmas[c], steps[b]);
          grid[a][b][c][d] = Epsilon(l, deltas[d]).value_or(NAN);
        }
  int violations = 0, checks = 0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 3; ++d) {
          const double e = grid[a][b][c][d];
          auto check = [&](bool ok) {
            ++checks;
            violations += !ok;
          };
          check(std::isfinite(e));
          if (a < 2) check(grid[a + 1][b][c][d] > e);  // larger q
          if (b < 2) check(grid[a][b + 1][c][d] > e);  // more steps
          if (c < 2) check(grid[a][b][c + 1][d] < e);  // more noise
          if (d < 2) check(grid[a][b][c][d + 1] < e);  // larger delta
        }
  pass = pass && violations == 0;
  absl::StrAppendFormat(&detail, "monotonicity %d/%d on 3x3x3x3 grid",
                        checks - violations, checks);
  return {pass, detail};
}

// ---------------------------------------------------------------- 3

Outcome LedgerEquivalence() {
  bool pass = true;
  std::string detail;
  for (const TrainConfig& base : {TinyConfig(), PlantedConfig()}) {
    TrainConfig c = base;
    absl::StatusOr<size_t> n = TrainSetSize(c.data);
    if (!n.ok()) return {false, n.status().ToString()};
    const double q = static_cast<double>(c.batch_size) / *n;
    DpSgdConfig dp = c.dp;
    dp.sample_rate = q;
    const double sigma = c.sigma.value_or(3.0);
    PrivacyLedger dpsgd;  // T epochs of plain DP-SGD
    dpsgd.Record(q, sigma, dp.batches_per_epoch() * dp.epochs);
    c.strategy = Strategy::kSparta;
    const PrivacyLedger planned = PlannedLedger(c, *n, sigma);
    const bool same_plan = planned == dpsgd;
    pass = pass && same_plan;
    absl::StrAppendFormat(&detail, "planned %s (%d steps); ",
                          same_plan ? "equal" : "DIFFERENT",
                          planned.total_steps());
  }
  // Executed runs: the ledger actually spent by SPARTA and by All.
  TrainConfig c = TinyConfig();
  absl::StatusOr<std::shared_ptr<const PreparedTask>> task = PrepareTask(c);
  if (!task.ok()) return {false, task.status().ToString()};
  PrivacyLedger dpsgd;
  dpsgd.Record(0.1, *c.sigma, 10 * c.dp.epochs);
  for (uint64_t seed : {0, 1, 2}) {
    for (Strategy s : {Strategy::kSparta, Strategy::kAll}) {
      c.strategy = s;
      absl::StatusOr<SeedResult> r = RunSeed(c, **task, *c.sigma, seed);
      if (!r.ok()) return {false, r.status().ToString()};
      pass = pass && r->ledger == dpsgd && r->unaccounted_batches == 0;
    }
  }
  absl::StrAppend(&detail, pass ? "executed sparta/all ledgers equal"
                                : "executed ledgers differ");
  return {pass, detail};
}

// ---------------------------------------------------------------- 4

double PlantedSigma() {
  const TrainConfig c = PlantedConfig();
  absl::StatusOr<size_t> n = TrainSetSize(c.data);
  if (!n.ok()) return NAN;
  return ResolveNoiseMultiplier(c, *n).value_or(NAN);
}

// Planted overlap of SPARTA masks after the scoring epoch, per seed.
absl::StatusOr<std::vector<double>> ScoringOverlap(GroupingKind grouping,
                                                   Strategy strategy,
                                                   double sigma) {
  TrainConfig c = PlantedConfig();
  c.strategy = strategy;
  c.grouping = grouping;
  c.target_epsilon.reset();
  c.sigma = sigma;
  c.dp.epochs = c.dp.mask_epoch + 1;  // stop right after selection
  absl::StatusOr<std::shared_ptr<const PreparedTask>> task = PrepareTask(c);
  if (!task.ok()) return task.status();
  std::vector<double> out;
  for (uint64_t seed : c.seeds) {
    absl::StatusOr<SeedResult> r = RunSeed(c, **task, sigma, seed);
    if (!r.ok()) return r.status();
    out.push_back(r->mask.planted_overlap.value_or(NAN));
  }
  return out;
}

Outcome NoiseCancellation() {
  bool pass = true;
  std::string detail;
  const double sigma = PlantedSigma();
  const double clip = 1.0;
  const size_t batches = 20;
  const int trials = 10000;
  const Model model = MakeModel(testing::MlpSpec(64, {32}, 4));
  const ParamVector p = testing::RandomParams(model, 1);
  const Grouping rows = Grouping::Rows(*model.layout());
  Batch empty;
  empty.inputs = Matrix(0, 64);
  std::vector<double> sum(rows.num_groups(), 0.0), sum2(rows.num_groups(), 0.0);
  CounterRng rng(404, RngStream::kScoring);
  for (int t = 0; t < trials; ++t) {
    ScoreAccumulator acc(model.layout()->maskable_dim());
    PrivacyLedger ledger;
    for (size_t b = 0; b < batches; ++b) {
      AccumulateScores(model, p, empty, clip, sigma, 0.05, rng, acc, ledger);
    }
    absl::StatusOr<std::vector<double>> v = GroupScores(acc, rows);
    for (size_t j = 0; j < v->size(); ++j) {
      sum[j] += (*v)[j];
      sum2[j] += (*v)[j] * (*v)[j];
    }
  }
  // Groups are independent and identically distributed, so the pooled ratio
  // var/want is the primary statistic. Each group is also checked at the
  // bound that keeps the family-wise rate at the two-sided 3 SE level.
  const double family_p = std::erfc(3.0 / std::sqrt(2.0));
  const double per_group_p = family_p / rows.num_groups();
  double lo = 3.0, hi = 10.0;
  while (hi - lo > 1e-9) {
    const double mid = 0.5 * (lo + hi);
    (std::erfc(mid / std::sqrt(2.0)) > per_group_p ? lo : hi) = mid;
  }
  const double group_limit = lo;
  double worst_z = 0.0, ratio_sum = 0.0;
  for (size_t j = 0; j < rows.num_groups(); ++j) {
    const double var = (sum2[j] - sum[j] * sum[j] / trials) / (trials - 1);
    const double want = rows.group_size(j) * batches * sigma * sigma * clip * clip;
    const double rel_se = std::sqrt(2.0 / (trials - 1));
    worst_z = std::max(worst_z, std::abs(var / want - 1.0) / rel_se);
    ratio_sum += var / want;
  }
  const double pooled = ratio_sum / rows.num_groups();
  const double pooled_se = std::sqrt(2.0 / (trials - 1) / rows.num_groups());
  const double pooled_z = std::abs(pooled - 1.0) / pooled_se;
  pass = pass && pooled_z <= 3.0 && worst_z <= group_limit;
  absl::StrAppendFormat(&detail,
                        "Var(v_j)/(|G_j| T_b sigma^2 C^2) over %d trials, %d "
                        "groups: pooled %.4f (%.2f SE, limit 3), worst group "
                        "%.2f SE (limit %.2f); ",
                        trials, rows.num_groups(), pooled, pooled_z, worst_z,
                        group_limit);

  absl::StatusOr<std::vector<double>> row =
      ScoringOverlap(GroupingKind::kRow, Strategy::kSparta, sigma);
  absl::StatusOr<std::vector<double>> single =
      ScoringOverlap(GroupingKind::kSingleton, Strategy::kSparta, sigma);
  if (!row.ok()) return {false, row.status().ToString()};
  if (!single.ok()) return {false, single.status().ToString()};
  const bool better = Mean(*row) > Mean(*single);
  pass = pass && better;
  absl::StrAppendFormat(&detail,
                        "planted overlap row(64) %.3f vs singleton %.3f over "
                        "%d seeds at sigma %.3f",
                        Mean(*row), Mean(*single), row->size(), sigma);
  return {pass, detail};
}

// ---------------------------------------------------------------- 5

// Masks with the budget they were drawn under; fed to criterion 7.
std::vector<std::pair<Mask, double>> g_collected_masks;
std::vector<std::string> g_frozen_violations;

absl::Status CheckFrozen(const SeedArtifacts& a, double sparsity,
                         const std::string& label) {
  if (!a.mask) return absl::OkStatus();
  g_collected_masks.emplace_back(*a.mask, sparsity);
  std::span<const uint8_t> f = a.mask->coordinate_filter();
  for (size_t i = 0; i < f.size(); ++i) {
    if (!f[i] && std::bit_cast<uint64_t>(a.final_params[i]) !=
                     std::bit_cast<uint64_t>(a.initial[i])) {
      g_frozen_violations.push_back(absl::StrCat(label, " coordinate ", i));
      break;
    }
  }
  return absl::OkStatus();
}

Outcome AblationOrdering() {
  std::map<std::string, std::vector<double>> acc;
  std::string detail;
  struct Arm {
    const char* name;
    Strategy strategy;
    GroupingKind grouping;
  };
  // dpsgd-grad and its random baseline select single coordinates.
  const Arm arms[] = {
      {"oracle", Strategy::kOracle, GroupingKind::kRow},
      {"sparta", Strategy::kSparta, GroupingKind::kRow},
      {"dpsgd-grad", Strategy::kDpSgdGrad, GroupingKind::kSingleton},
      {"random", Strategy::kRandom, GroupingKind::kSingleton},
  };
  for (const Arm& arm : arms) {
    TrainConfig c = PlantedConfig();
    c.strategy = arm.strategy;
    c.grouping = arm.grouping;
    uint64_t unaccounted = 0;
    absl::StatusOr<RunReport> r =
        RunExperiment(c, [&](const SeedResult& s, const SeedArtifacts& a) {
          if (arm.strategy != Strategy::kOracle) {
            unaccounted += s.unaccounted_batches;
          }
          return CheckFrozen(a, c.sparsity, arm.name);
        });
    if (!r.ok()) return {false, absl::StrCat(arm.name, ": ", r.status().ToString())};
    if (unaccounted != 0) {
      return {false, absl::StrCat(arm.name, ": unaccounted batches")};
    }
    for (const SeedResult& s : r->seeds) acc[arm.name].push_back(s.accuracy);
    absl::StrAppendFormat(&detail, "%s %.4f+-%.4f, ", arm.name,
                          Mean(acc[arm.name]), StdErr(acc[arm.name]));
  }
  auto pooled = [&](const char* a, const char* b) {
    return std::sqrt(StdErr(acc[a]) * StdErr(acc[a]) +
                     StdErr(acc[b]) * StdErr(acc[b]));
  };
  const double oracle = Mean(acc["oracle"]);
  const double sparta = Mean(acc["sparta"]);
  const double dpsgd = Mean(acc["dpsgd-grad"]);
  const double random = Mean(acc["random"]);
  const double sep_sr = (sparta - random) / pooled("sparta", "random");
  const double sep_dr = std::abs(dpsgd - random) / pooled("dpsgd-grad", "random");
  const bool c1 = oracle >= sparta;
  const bool c2 = sparta > dpsgd;
  const bool c3 = sparta > random && sep_sr > 2.0;
  const bool c4 = sep_dr <= 2.0;
  absl::StrAppendFormat(
      &detail,
      "oracle>=sparta %s, sparta>dpsgd-grad %s, sparta-random %.1f pooled SE "
      "(>2) %s, |dpsgd-grad-random| %.1f pooled SE (<=2) %s",
      c1 ? "ok" : "NO", c2 ? "ok" : "NO", sep_sr, c3 ? "ok" : "NO", sep_dr,
      c4 ? "ok" : "NO");
  return {c1 && c2 && c3 && c4, detail};
}

// ---------------------------------------------------------------- 6

Outcome StackedEquivalence() {
  constexpr int kInstances = 1000;
  double worst = 0.0;
  size_t moved = 0;
  for (int inst = 0; inst < kInstances; ++inst) {
    CounterRng rng(inst, 61);
    const size_t in = 3 + rng.Below(6);
    std::vector<size_t> hidden(1 + rng.Below(2));
    for (size_t& h : hidden) h = 2 + rng.Below(7);
    const size_t classes = 2 + rng.Below(3);
    const bool gains = rng.Below(2) == 1;
    const Model model = MakeModel(testing::MlpSpec(in, hidden, classes, gains));
    const auto& layout = model.layout();
    auto grouping = std::make_shared<const Grouping>(Grouping::Rows(*layout));
    TrainableKinds kinds;
    kinds.bias = rng.Below(2) == 1;
    kinds.norm_scale = rng.Below(2) == 1;
    kinds.head = rng.Below(4) != 0;
    Mask mask(layout, grouping, kinds);
    const double density = rng.Uniform();
    for (size_t j = 0; j < grouping->num_groups(); ++j) {
      if (rng.Uniform() < density) mask.SetGroup(j, true);
    }
    DpSgdConfig c;
    c.lr = 0.5 * rng.Uniform();
    c.classifier_lr = rng.Uniform();
    c.momentum = rng.Uniform();
    ParamVector a = testing::RandomParams(model, 1000 + inst);
    ParamVector b = a;
    const ParamVector start = a;
    MomentumState ma, mb;
    // Some instances start from a warm velocity.
    if (rng.Below(2) == 1) {
      ma.velocity.resize(a.dim());
      for (double& v : ma.velocity) v = rng.Gaussian();
      mb = ma;
    }
    for (int step = 0; step < 3; ++step) {
      ParamVector g(layout);
      for (double& x : g.values()) x = rng.Gaussian();
      const double factor = rng.Uniform();
      if (!Step(a, g, &mask, c, factor, ma).ok()) return {false, "Step failed"};
      absl::StatusOr<ParamVector> out = StackedStep(b, g, mask, c, factor, mb);
      if (!out.ok()) return {false, out.status().ToString()};
      b = *std::move(out);
      for (size_t j = 0; j < a.dim(); ++j) {
        worst = std::max(worst, std::abs(a[j] - b[j]));
      }
    }
    for (size_t j = 0; j < a.dim(); ++j) moved += a[j] != start[j];
  }
  return {worst <= 1e-12,
          absl::StrFormat("max |stacked - step| %.1e (tol 1e-12) over %d "
                          "instances x 3 steps, %d coordinates moved",
                          worst, kInstances, moved)};
}

// ---------------------------------------------------------------- 7

Outcome FeasibilityAndFrozen() {
  // Masks from every strategy, grouping and a range of budgets on the tiny
  // task, plus everything criterion 5 produced.
  TrainConfig c = TinyConfig();
  int runs = 0;
  for (Strategy s : {Strategy::kSparta, Strategy::kDpSgdGrad, Strategy::kOracle,
                     Strategy::kMagnitude, Strategy::kRandom, Strategy::kLast,
                     Strategy::kBitFit}) {
    for (GroupingKind g : {GroupingKind::kRow, GroupingKind::kSingleton,
                           GroupingKind::kRandomBlocks}) {
      for (double sparsity : {0.0, 0.05, 0.3, 0.77, 1.0}) {
        c.strategy = s;
        c.grouping = g;
        c.block_size = 3;
        c.sparsity = sparsity;
        absl::StatusOr<std::shared_ptr<const PreparedTask>> task = PrepareTask(c);
        if (!task.ok()) return {false, task.status().ToString()};
        SeedArtifacts art;
        absl::StatusOr<SeedResult> r = RunSeed(c, **task, *c.sigma, runs, {}, &art);
        if (!r.ok()) return {false, r.status().ToString()};
        // Structural masks are bounded only by the whole layer.
        const bool structural = s == Strategy::kLast || s == Strategy::kBitFit;
        (void)CheckFrozen(art, structural ? 1.0 : sparsity,
                          std::string(StrategyName(s)));
        ++runs;
      }
    }
  }
  int infeasible = 0;
  for (const auto& [m, sparsity] : g_collected_masks) {
    infeasible += !m.CheckFeasible(SparsityBudget{sparsity}).ok();
  }
  // Top-k against a full sort.
  int topk_mismatch = 0;
  auto layout = std::make_shared<ParamLayout>();
  layout->AddSegment("a", SegmentKind::kWeightMatrix, 41, 2, false);
  layout->AddSegment("b", SegmentKind::kWeightMatrix, 17, 3, false);
  auto rows = std::make_shared<const Grouping>(Grouping::Rows(*layout));
  CounterRng rng(7, 71);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> v(rows->num_groups());
    for (double& x : v) x = t % 4 == 0 ? std::floor(3 * rng.Uniform()) : rng.Gaussian();
    const SparsityBudget budget{rng.Uniform()};
    absl::StatusOr<Mask> m = TopKMask(v, layout, rows, budget);
    if (!m.ok()) {
      ++topk_mismatch;
      continue;
    }
    for (size_t l = 0; l < rows->num_layers(); ++l) {
      const size_t lo = rows->layer_begin(l), hi = rows->layer_end(l);
      const std::vector<size_t> want = oracle::TopKBySort(
          std::span<const double>(v).subspan(lo, hi - lo),
          budget.GroupsForLayer(hi - lo));
      std::vector<size_t> got;
      for (size_t j = lo; j < hi; ++j) {
        if (m->group_selected(j)) got.push_back(j - lo);
      }
      topk_mismatch += got != want;
    }
  }
  const bool pass = infeasible == 0 &&
                    g_frozen_violations.empty() && topk_mismatch == 0;
  return {pass,
          absl::StrFormat("%d masks checked, %d infeasible; "
                          "%d frozen-coordinate violations; top-k vs sort: "
                          "%d mismatches over 1000 vectors",
                          g_collected_masks.size(), infeasible,
                          g_frozen_violations.size(), topk_mismatch)};
}

// ---------------------------------------------------------------- 8

struct Trace {
  std::vector<double> loss, accuracy;
  ParamVector final_params;
};

absl::StatusOr<Trace> Trajectory(const TrainConfig& c, uint64_t seed,
                                 RunOptions options = {}) {
  absl::StatusOr<std::shared_ptr<const PreparedTask>> task = PrepareTask(c);
  if (!task.ok()) return task.status();
  SeedArtifacts art;
  absl::StatusOr<SeedResult> r =
      RunSeed(c, **task, *c.sigma, seed, options, &art);
  if (!r.ok()) return r.status();
  Trace t;
  for (const EpochRecord& e : r->epochs) {
    t.loss.push_back(e.train_loss);
    t.accuracy.push_back(e.test_accuracy);
  }
  t.final_params = art.final_params;
  return t;
}

bool SameTrace(const Trace& a, const Trace& b) {
  return a.loss == b.loss && a.accuracy == b.accuracy &&
         a.final_params == b.final_params;
}

Outcome Degeneration() {
  int compared = 0, differ = 0;
  for (TrainConfig base : {TinyConfig(), PlantedConfig()}) {
    base.target_epsilon.reset();
    base.sigma = 2.0;
    base.dp.epochs = std::min(base.dp.epochs, 6);
    base.dp.mask_epoch = 2;
    for (uint64_t seed : {0, 1}) {
      TrainConfig c = base;
      c.strategy = Strategy::kAll;
      absl::StatusOr<Trace> all = Trajectory(c, seed);
      c.strategy = Strategy::kBitFit;
      absl::StatusOr<Trace> bitfit = Trajectory(c, seed);
      if (!all.ok() || !bitfit.ok()) return {false, "reference run failed"};
      for (Strategy s : {Strategy::kMagnitude, Strategy::kRandom}) {
        c.strategy = s;
        c.sparsity = 1.0;
        absl::StatusOr<Trace> full = Trajectory(c, seed);
        c.sparsity = 0.0;
        absl::StatusOr<Trace> none = Trajectory(c, seed);
        compared += 2;
        differ += !full.ok() || !SameTrace(*full, *all);
        differ += !none.ok() || !SameTrace(*none, *bitfit);
      }
      // SPARTA after its scoring epoch: the full mask trains exactly like
      // the dense path, the empty mask exactly like BitFit.
      c.strategy = Strategy::kSparta;
      c.sparsity = 1.0;
      absl::StatusOr<Trace> masked = Trajectory(c, seed);
      absl::StatusOr<Trace> dense = Trajectory(c, seed, {.dense_when_full = true});
      ++compared;
      differ += !masked.ok() || !dense.ok() || !SameTrace(*masked, *dense);
      c.sparsity = 0.0;
      absl::StatusOr<std::shared_ptr<const PreparedTask>> task = PrepareTask(c);
      SeedArtifacts art;
      absl::StatusOr<SeedResult> r = RunSeed(c, **task, *c.sigma, seed, {}, &art);
      ++compared;
      differ += !r.ok() || !art.mask ||
                !(*art.mask == SelectMaskBitFit(art.mask->layout_ptr(),
                                                art.mask->grouping()));
    }
  }
  return {differ == 0,
          absl::StrFormat("%d/%d trajectories bit-identical (s=100%% vs all, "
                          "s=0%% vs bitfit)",
                          compared - differ, compared)};
}

}  // namespace
}  // namespace dpsparse

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::vector<int> only;
  app.add_option("criteria", only, "criterion numbers to run (default all)");
  CLI11_PARSE(app, argc, argv);

  using dpsparse::Outcome;
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> fn;
  };
  // 5 runs before 7 so its masks and final weights are audited too.
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", 60, dpsparse::GradientCorrectness},
      {2, "accountant correctness", 60, dpsparse::AccountantCorrectness},
      {3, "scoring schedule spends T epochs of DP-SGD", 0,
       dpsparse::LedgerEquivalence},
      {4, "noise cancellation and row grouping", 300,
       dpsparse::NoiseCancellation},
      {5, "ablation ordering", 1800, dpsparse::AblationOrdering},
      {6, "stacked-update equivalence", 0, dpsparse::StackedEquivalence},
      {7, "mask feasibility and frozen weights", 0,
       dpsparse::FeasibilityAndFrozen},
      {8, "degeneration to all-layers and bitfit", 0, dpsparse::Degeneration},
  };
  bool all_pass = true;
  for (const Criterion& c : criteria) {
    if (!only.empty() &&
        std::find(only.begin(), only.end(), c.id) == only.end()) {
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome o = c.fn();
    const double secs = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) {
      o.pass = false;
      o.detail += absl::StrFormat("; runtime over %.0f s", c.budget_seconds);
    }
    all_pass = all_pass && o.pass;
    std::printf("%s %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id,
                c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
