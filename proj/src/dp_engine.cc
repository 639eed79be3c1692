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

#include "dpsparse/dp_engine.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "absl/strings/str_cat.h"

namespace dpsparse {
namespace {

bool Passes(std::span<const uint8_t> filter, size_t i) {
  return filter.empty() || filter[i] != 0;
}

double SegmentLr(const Segment& s, const DpSgdConfig& config,
                 double lr_factor) {
  return (s.classifier_head ? config.classifier_lr : config.lr) * lr_factor;
}

}  // namespace

absl::Status DpSgdConfig::Validate() const {
  if (!(clip > 0.0)) return absl::InvalidArgumentError("clip must be > 0");
  if (!(noise_multiplier >= 0.0) || std::isinf(noise_multiplier)) {
    return absl::InvalidArgumentError("noise_multiplier must be finite, >= 0");
  }
  if (std::isnan(mask_noise_multiplier) || std::isinf(mask_noise_multiplier)) {
    return absl::InvalidArgumentError("mask_noise_multiplier must be finite");
  }
  if (!(sample_rate > 0.0 && sample_rate <= 1.0)) {
    return absl::InvalidArgumentError("sample_rate must lie in (0, 1]");
  }
  if (!(lr >= 0.0) || !(classifier_lr >= 0.0)) {
    return absl::InvalidArgumentError("learning rates must be >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    return absl::InvalidArgumentError("momentum must lie in [0, 1)");
  }
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    return absl::InvalidArgumentError("warmup fraction must lie in [0, 1)");
  }
  if (epochs < 1) return absl::InvalidArgumentError("epochs must be >= 1");
  if (mask_epoch < 0 || mask_epoch > epochs - 1) {
    return absl::InvalidArgumentError(absl::StrCat(
        "mask_epoch must lie in [0, epochs - 1], got ", mask_epoch));
  }
  return absl::OkStatus();
}

size_t DpSgdConfig::batches_per_epoch() const {
  return static_cast<size_t>(std::ceil(1.0 / sample_rate - 1e-9));
}

double LearningRateFactor(const DpSgdConfig& config, size_t step,
                          size_t total_steps) {
  if (config.schedule == ScheduleKind::kConstant || total_steps == 0) {
    return 1.0;
  }
  const size_t warmup = static_cast<size_t>(
      std::ceil(config.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) {
    return static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const double span = static_cast<double>(total_steps - warmup);
  const double t = static_cast<double>(step - warmup);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * t / span));
}

ParamVector Clip(const ParamVector& g, double clip,
                 std::span<const uint8_t> filter) {
  ParamVector out = g;
  std::span<double> v = out.values();
  double ss = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    if (Passes(filter, i)) {
      ss += v[i] * v[i];
    } else {
      v[i] = 0.0;
    }
  }
  const double factor = std::max(1.0, std::sqrt(ss) / clip);
  if (factor > 1.0) {
    for (double& x : v) x /= factor;
  }
  return out;
}

PoissonSampler::PoissonSampler(size_t dataset_size, double sample_rate,
                               CounterRng rng)
    : dataset_size_(dataset_size), sample_rate_(sample_rate), rng_(rng) {}

std::vector<size_t> PoissonSampler::Next() {
  ++batches_drawn_;
  std::vector<size_t> ids;
  if (sample_rate_ >= 1.0) {
    ids.resize(dataset_size_);
    for (size_t i = 0; i < dataset_size_; ++i) ids[i] = i;
    return ids;
  }
  ids.reserve(static_cast<size_t>(sample_rate_ * dataset_size_ * 1.2) + 8);
  for (size_t i = 0; i < dataset_size_; ++i) {
    if (rng_.Uniform() < sample_rate_) ids.push_back(i);
  }
  return ids;
}

Batch MakeBatch(const Dataset& data, std::span<const size_t> ids) {
  Batch batch;
  batch.inputs = Matrix(ids.size(), data.dim());
  batch.labels.resize(ids.size());
  batch.sample_ids.assign(ids.begin(), ids.end());
  for (size_t r = 0; r < ids.size(); ++r) {
    std::span<const double> src = data.features.row(ids[r]);
    std::copy(src.begin(), src.end(), batch.inputs.row(r).begin());
    batch.labels[r] = data.labels[ids[r]];
  }
  return batch;
}

void AddGaussianNoise(std::span<double> values, double stddev,
                      std::span<const uint8_t> filter, CounterRng& rng) {
  if (stddev == 0.0) return;
  for (size_t i = 0; i < values.size(); ++i) {
    if (Passes(filter, i)) values[i] += stddev * rng.Gaussian();
  }
}

ParamVector PrivatizeSum(std::vector<double> clipped_sum,
                         std::shared_ptr<const ParamLayout> layout,
                         const DpSgdConfig& config, size_t dataset_size,
                         std::span<const uint8_t> filter, CounterRng& rng,
                         PrivacyLedger& ledger) {
  ledger.Record(config.sample_rate, config.noise_multiplier);
  if (config.noise_multiplier > 0.0) {
    AddGaussianNoise(clipped_sum, config.noise_multiplier * config.clip,
                     filter, rng);
  }
  const double denom = config.sample_rate * static_cast<double>(dataset_size);
  for (size_t i = 0; i < clipped_sum.size(); ++i) {
    clipped_sum[i] = Passes(filter, i) ? clipped_sum[i] / denom : 0.0;
  }
  return ParamVector(std::move(layout), std::move(clipped_sum));
}

absl::StatusOr<ParamVector> NoisyBatchGrad(
    const std::vector<ParamVector>& per_sample,
    std::shared_ptr<const ParamLayout> layout, const DpSgdConfig& config,
    size_t dataset_size, std::span<const uint8_t> filter, CounterRng& rng,
    PrivacyLedger& ledger) {
  if (!filter.empty() && filter.size() != layout->dim()) {
    return absl::InvalidArgumentError("filter size does not match layout");
  }
  std::vector<double> sum(layout->dim(), 0.0);
  for (const ParamVector& g : per_sample) {
    if (!(g.layout() == *layout)) {
      return absl::InvalidArgumentError("per-sample gradient layout mismatch");
    }
    const ParamVector clipped = Clip(g, config.clip, filter);
    for (size_t i = 0; i < sum.size(); ++i) sum[i] += clipped[i];
  }
  return PrivatizeSum(std::move(sum), std::move(layout), config, dataset_size,
                      filter, rng, ledger);
}

absl::Status Step(ParamVector& params, const ParamVector& grad,
                  const Mask* mask, const DpSgdConfig& config,
                  double lr_factor, MomentumState& momentum) {
  if (!params.SameLayout(grad)) {
    return absl::InvalidArgumentError("gradient layout does not match params");
  }
  if (mask != nullptr && !(mask->layout() == params.layout())) {
    return absl::InvalidArgumentError("mask layout does not match params");
  }
  if (momentum.velocity.empty()) momentum.velocity.assign(params.dim(), 0.0);
  if (momentum.velocity.size() != params.dim()) {
    return absl::InvalidArgumentError("momentum size does not match params");
  }
  std::span<const uint8_t> filter;
  if (mask != nullptr) filter = mask->coordinate_filter();
  std::span<double> w = params.values();
  std::span<const double> g = grad.values();
  std::vector<double>& v = momentum.velocity;
  const double mu = config.momentum;
  for (const Segment& s : params.layout().segments()) {
    const double eta = SegmentLr(s, config, lr_factor);
    const size_t end = s.offset + s.size();
    if (filter.empty()) {
      for (size_t i = s.offset; i < end; ++i) {
        v[i] = mu * v[i] + g[i];
        w[i] -= eta * v[i];
      }
    } else {
      for (size_t i = s.offset; i < end; ++i) {
        if (!filter[i]) continue;
        v[i] = mu * v[i] + g[i];
        w[i] -= eta * v[i];
      }
    }
  }
  return absl::OkStatus();
}

absl::StatusOr<StackedRowState> StackedRowState::Create(
    const ParamVector& params, const Mask& mask,
    const MomentumState& momentum) {
  if (mask.grouping()->kind() != GroupingKind::kRow) {
    return absl::InvalidArgumentError(
        "stacked updates require a row-grouped mask");
  }
  if (!(mask.layout() == params.layout())) {
    return absl::InvalidArgumentError("mask layout does not match params");
  }
  if (!momentum.velocity.empty() &&
      momentum.velocity.size() != params.dim()) {
    return absl::InvalidArgumentError("momentum size does not match params");
  }
  StackedRowState state;
  state.base_ = params;
  const ParamLayout& layout = params.layout();
  state.dense_filter_.assign(params.dim(), 0);
  state.dense_velocity_.assign(params.dim(), 0.0);
  for (const Segment& s : layout.segments()) {
    if (s.maskable() || !SegmentAlwaysTrainable(s, mask.trainable_kinds())) {
      continue;
    }
    for (size_t i = s.offset; i < s.offset + s.size(); ++i) {
      state.dense_filter_[i] = 1;
      if (!momentum.velocity.empty()) {
        state.dense_velocity_[i] = momentum.velocity[i];
      }
    }
  }
  const Grouping& grouping = *mask.grouping();
  for (size_t l = 0; l < layout.maskable_segments().size(); ++l) {
    const Segment& s = layout.segment(layout.maskable_segments()[l]);
    Layer layer;
    layer.segment = layout.maskable_segments()[l];
    layer.cols = s.cols;
    for (size_t g = grouping.layer_begin(l); g < grouping.layer_end(l); ++g) {
      if (!mask.group_selected(g)) continue;
      const size_t r = g - grouping.layer_begin(l);
      layer.rows.push_back(r);
      const size_t start = s.offset + r * s.cols;
      std::span<const double> row = params.values().subspan(start, s.cols);
      layer.values.insert(layer.values.end(), row.begin(), row.end());
      if (momentum.velocity.empty()) {
        layer.velocity.insert(layer.velocity.end(), s.cols, 0.0);
      } else {
        layer.velocity.insert(layer.velocity.end(),
                              momentum.velocity.begin() + start,
                              momentum.velocity.begin() + start + s.cols);
      }
    }
    state.layers_.push_back(std::move(layer));
  }
  return state;
}

absl::Status StackedRowState::Step(const ParamVector& grad,
                                   const DpSgdConfig& config,
                                   double lr_factor) {
  if (!grad.SameLayout(base_)) {
    return absl::InvalidArgumentError("gradient layout does not match params");
  }
  const ParamLayout& layout = base_.layout();
  std::span<const double> g = grad.values();
  const double mu = config.momentum;
  std::span<double> w = base_.values();
  for (const Segment& s : layout.segments()) {
    if (s.maskable()) continue;
    const double eta = SegmentLr(s, config, lr_factor);
    for (size_t i = s.offset; i < s.offset + s.size(); ++i) {
      if (!dense_filter_[i]) continue;
      dense_velocity_[i] = mu * dense_velocity_[i] + g[i];
      w[i] -= eta * dense_velocity_[i];
    }
  }
  for (Layer& layer : layers_) {
    const Segment& s = layout.segment(layer.segment);
    const double eta = SegmentLr(s, config, lr_factor);
    for (size_t k = 0; k < layer.rows.size(); ++k) {
      const double* grow = g.data() + s.offset + layer.rows[k] * layer.cols;
      double* vrow = layer.velocity.data() + k * layer.cols;
      double* wrow = layer.values.data() + k * layer.cols;
      for (size_t c = 0; c < layer.cols; ++c) {
        vrow[c] = mu * vrow[c] + grow[c];
        wrow[c] -= eta * vrow[c];
      }
    }
  }
  return absl::OkStatus();
}

ParamVector StackedRowState::Materialize() const {
  ParamVector out = base_;
  const ParamLayout& layout = base_.layout();
  for (const Layer& layer : layers_) {
    const Segment& s = layout.segment(layer.segment);
    for (size_t k = 0; k < layer.rows.size(); ++k) {
      std::copy_n(layer.values.begin() + k * layer.cols, layer.cols,
                  out.values().begin() + s.offset + layer.rows[k] * layer.cols);
    }
  }
  return out;
}

MomentumState StackedRowState::MaterializeMomentum() const {
  MomentumState m;
  m.velocity = dense_velocity_;
  const ParamLayout& layout = base_.layout();
  for (const Layer& layer : layers_) {
    const Segment& s = layout.segment(layer.segment);
    for (size_t k = 0; k < layer.rows.size(); ++k) {
      std::copy_n(layer.velocity.begin() + k * layer.cols, layer.cols,
                  m.velocity.begin() + s.offset + layer.rows[k] * layer.cols);
    }
  }
  return m;
}

size_t StackedRowState::stacked_rows() const {
  size_t n = 0;
  for (const Layer& layer : layers_) n += layer.rows.size();
  return n;
}

absl::StatusOr<ParamVector> StackedStep(const ParamVector& params,
                                        const ParamVector& grad,
                                        const Mask& mask,
                                        const DpSgdConfig& config,
                                        double lr_factor,
                                        MomentumState& momentum) {
  absl::StatusOr<StackedRowState> state =
      StackedRowState::Create(params, mask, momentum);
  if (!state.ok()) return state.status();
  if (absl::Status s = state->Step(grad, config, lr_factor); !s.ok()) return s;
  MomentumState updated = state->MaterializeMomentum();
  // Frozen coordinates keep their previous velocity, as in Step().
  if (momentum.velocity.empty()) momentum.velocity.assign(params.dim(), 0.0);
  const std::span<const uint8_t> filter = mask.coordinate_filter();
  for (size_t i = 0; i < params.dim(); ++i) {
    if (filter[i]) momentum.velocity[i] = updated.velocity[i];
  }
  return state->Materialize();
}

}  // namespace dpsparse
