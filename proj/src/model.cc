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

#include "dpsparse/model.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "absl/strings/str_cat.h"
#include "dpsparse/data.h"
#include "dpsparse/kernels.h"
#include "dpsparse/rng.h"

namespace dpsparse {

absl::Status ModelSpec::Validate() const {
  if (input_dim == 0) return absl::InvalidArgumentError("input_dim must be > 0");
  if (num_classes < 2) {
    return absl::InvalidArgumentError("num_classes must be >= 2");
  }
  if (hidden.size() > 3) {
    return absl::InvalidArgumentError("at most 3 hidden layers are supported");
  }
  for (size_t h : hidden) {
    if (h == 0) return absl::InvalidArgumentError("hidden width must be > 0");
  }
  if (conv) {
    if (conv->in_channels == 0 || conv->out_channels == 0 || conv->kernel == 0) {
      return absl::InvalidArgumentError("conv dimensions must be > 0");
    }
    if (input_dim % conv->in_channels != 0) {
      return absl::InvalidArgumentError(absl::StrCat(
          "input_dim ", input_dim, " not divisible by conv in_channels ",
          conv->in_channels));
    }
    if (conv->kernel > input_dim / conv->in_channels) {
      return absl::InvalidArgumentError("conv kernel longer than the signal");
    }
  }
  return absl::OkStatus();
}

absl::StatusOr<Model> Model::Create(const ModelSpec& spec) {
  if (absl::Status s = spec.Validate(); !s.ok()) return s;
  auto layout = std::make_shared<ParamLayout>();
  std::vector<Layer> layers;
  size_t width = spec.input_dim;

  auto add_scale = [&](Layer& layer, const std::string& prefix) {
    if (spec.norm_scale) {
      layer.scale_seg = static_cast<int>(layout->AddSegment(
          prefix + ".scale", SegmentKind::kNormScale, layer.units, 1, false));
    }
  };

  if (spec.conv) {
    Layer l;
    l.kind = LayerKind::kConv;
    l.in_channels = spec.conv->in_channels;
    l.length = spec.input_dim / spec.conv->in_channels;
    l.kernel = spec.conv->kernel;
    l.out_length = l.length - l.kernel + 1;
    l.units = spec.conv->out_channels;
    l.fan_in = l.in_channels * l.kernel;
    l.in = width;
    l.out = l.units * l.out_length;
    l.weight_seg = layout->AddSegment("conv.weight", SegmentKind::kWeightMatrix,
                                      l.units, l.fan_in, false);
    l.bias_seg =
        layout->AddSegment("conv.bias", SegmentKind::kBias, l.units, 1, false);
    add_scale(l, "conv");
    width = l.out;
    layers.push_back(l);
  }
  for (size_t i = 0; i < spec.hidden.size(); ++i) {
    Layer l;
    l.kind = LayerKind::kDense;
    l.units = spec.hidden[i];
    l.fan_in = width;
    l.in = width;
    l.out = l.units;
    const std::string prefix = absl::StrCat("fc", i + 1);
    l.weight_seg = layout->AddSegment(prefix + ".weight",
                                      SegmentKind::kWeightMatrix, l.units,
                                      l.fan_in, false);
    l.bias_seg = layout->AddSegment(prefix + ".bias", SegmentKind::kBias,
                                    l.units, 1, false);
    add_scale(l, prefix);
    width = l.out;
    layers.push_back(l);
  }
  Layer head;
  head.kind = LayerKind::kDense;
  head.relu = false;
  head.units = spec.num_classes;
  head.fan_in = width;
  head.in = width;
  head.out = spec.num_classes;
  head.weight_seg = layout->AddSegment(
      "head.weight", SegmentKind::kWeightMatrix, head.units, width, true);
  head.bias_seg = layout->AddSegment("head.bias", SegmentKind::kBias,
                                     head.units, 1, true);
  layers.push_back(head);
  return Model(spec, std::move(layout), std::move(layers));
}

ParamVector Model::Init(uint64_t seed) const {
  ParamVector params(layout_);
  CounterRng rng(seed, RngStream::kInit);
  for (const Layer& l : layers_) {
    auto w = params.segment(l.weight_seg);
    const double stddev = l.relu ? std::sqrt(2.0 / l.fan_in)
                                 : std::sqrt(1.0 / l.fan_in);
    for (double& v : w) v = stddev * rng.Gaussian();
    if (l.scale_seg >= 0) {
      for (double& v : params.segment(l.scale_seg)) v = 1.0;
    }
  }
  return params;
}

void Model::ReinitializeHead(ParamVector& params, uint64_t seed) const {
  CounterRng rng(seed, RngStream::kHead);
  const Layer& head = layers_.back();
  const double stddev = std::sqrt(1.0 / head.fan_in);
  for (double& v : params.segment(head.weight_seg)) v = stddev * rng.Gaussian();
  for (double& v : params.segment(head.bias_seg)) v = 0.0;
}

Workspace Model::MakeWorkspace() const {
  Workspace ws;
  size_t widest = spec_.input_dim;
  for (const Layer& l : layers_) {
    ws.pre.emplace_back(l.out);
    ws.post.emplace_back(l.out);
    ws.gain_in.emplace_back(l.out);
    widest = std::max({widest, l.in, l.out});
  }
  ws.delta.resize(widest);
  ws.delta_prev.resize(widest);
  return ws;
}

std::span<const double> Model::Forward(const ParamVector& params,
                                       std::span<const double> x,
                                       Workspace& ws) const {
  std::span<const double> a = x;
  for (size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    const auto w = params.segment(l.weight_seg);
    const auto b = params.segment(l.bias_seg);
    std::vector<double>& u = ws.gain_in[li];
    std::vector<double>& z = ws.pre[li];
    std::vector<double>& h = ws.post[li];
    if (l.kind == LayerKind::kConv) {
      for (size_t o = 0; o < l.units; ++o) {
        const double* wo = w.data() + o * l.fan_in;
        for (size_t t = 0; t < l.out_length; ++t) {
          double acc = 0.0;
          for (size_t c = 0; c < l.in_channels; ++c) {
            const double* xc = a.data() + c * l.length + t;
            const double* wc = wo + c * l.kernel;
            for (size_t j = 0; j < l.kernel; ++j) acc += wc[j] * xc[j];
          }
          u[o * l.out_length + t] = acc;
        }
      }
    } else {
      for (size_t o = 0; o < l.units; ++o) {
        const double* wo = w.data() + o * l.fan_in;
        double acc = 0.0;
        for (size_t i = 0; i < l.fan_in; ++i) acc += wo[i] * a[i];
        u[o] = acc;
      }
    }
    const size_t per_unit = l.out / l.units;
    for (size_t o = 0; o < l.units; ++o) {
      const double gain =
          l.scale_seg >= 0 ? params.segment(l.scale_seg)[o] : 1.0;
      for (size_t t = 0; t < per_unit; ++t) {
        const size_t k = o * per_unit + t;
        z[k] = gain * u[k] + b[o];
        h[k] = l.relu ? std::max(0.0, z[k]) : z[k];
      }
    }
    a = h;
  }
  return a;
}

namespace {

// log(sum(exp(logits))) computed stably.
double LogSumExp(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

double Model::SampleLoss(const ParamVector& params, std::span<const double> x,
                         int label, Workspace& ws) const {
  const auto logits = Forward(params, x, ws);
  return LogSumExp(logits) - logits[label];
}

int Model::Predict(const ParamVector& params, std::span<const double> x,
                   Workspace& ws) const {
  const auto logits = Forward(params, x, ws);
  int best = 0;
  for (size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = static_cast<int>(k);
  }
  return best;
}

double Model::SampleGradient(const ParamVector& params,
                             std::span<const double> x, int label,
                             std::span<double> grad, Workspace& ws) const {
  const auto logits = Forward(params, x, ws);
  const double lse = LogSumExp(logits);
  const double loss = lse - logits[label];

  std::fill(grad.begin(), grad.end(), 0.0);
  // delta = dL/dz of the current layer.
  std::vector<double>& delta = ws.delta;
  std::vector<double>& delta_prev = ws.delta_prev;
  for (size_t k = 0; k < logits.size(); ++k) {
    delta[k] = std::exp(logits[k] - lse) - (static_cast<int>(k) == label);
  }

  for (size_t li = layers_.size(); li-- > 0;) {
    const Layer& l = layers_[li];
    const std::span<const double> a =
        li == 0 ? x : std::span<const double>(ws.post[li - 1]);
    const auto w = params.segment(l.weight_seg);
    const Segment& wseg = layout_->segment(l.weight_seg);
    const Segment& bseg = layout_->segment(l.bias_seg);
    double* gw = grad.data() + wseg.offset;
    double* gb = grad.data() + bseg.offset;
    double* gs = l.scale_seg >= 0
                     ? grad.data() + layout_->segment(l.scale_seg).offset
                     : nullptr;
    const std::vector<double>& u = ws.gain_in[li];
    const size_t per_unit = l.out / l.units;

    // Through the gain: du = delta * gain; d gain = sum delta * u.
    for (size_t o = 0; o < l.units; ++o) {
      const double gain =
          l.scale_seg >= 0 ? params.segment(l.scale_seg)[o] : 1.0;
      double db = 0.0;
      double dg = 0.0;
      for (size_t t = 0; t < per_unit; ++t) {
        const size_t k = o * per_unit + t;
        db += delta[k];
        dg += delta[k] * u[k];
        delta[k] *= gain;
      }
      gb[o] = db;
      if (gs) gs[o] = dg;
    }

    if (l.kind == LayerKind::kConv) {
      for (size_t o = 0; o < l.units; ++o) {
        double* go = gw + o * l.fan_in;
        for (size_t t = 0; t < l.out_length; ++t) {
          const double d = delta[o * l.out_length + t];
          if (d == 0.0) continue;
          for (size_t c = 0; c < l.in_channels; ++c) {
            const double* xc = a.data() + c * l.length + t;
            double* gc = go + c * l.kernel;
            for (size_t j = 0; j < l.kernel; ++j) gc[j] += d * xc[j];
          }
        }
      }
      // The conv layer is always first, so no input gradient is needed.
      continue;
    }

    for (size_t o = 0; o < l.units; ++o) {
      const double d = delta[o];
      double* go = gw + o * l.fan_in;
      for (size_t i = 0; i < l.fan_in; ++i) go[i] = d * a[i];
    }
    if (li == 0) break;
    std::fill(delta_prev.begin(), delta_prev.begin() + l.in, 0.0);
    for (size_t o = 0; o < l.units; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* wo = w.data() + o * l.fan_in;
      for (size_t i = 0; i < l.fan_in; ++i) delta_prev[i] += wo[i] * d;
    }
    const std::vector<double>& z_prev = ws.pre[li - 1];
    for (size_t i = 0; i < l.in; ++i) {
      delta[i] = z_prev[i] > 0.0 ? delta_prev[i] : 0.0;
    }
  }
  return loss;
}

absl::Status CheckBatch(const Model& model, const Batch& batch) {
  if (batch.size() == 0) return absl::OkStatus();
  if (batch.inputs.cols != model.spec().input_dim ||
      batch.inputs.rows != batch.size()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "batch shape ", batch.inputs.rows, "x", batch.inputs.cols,
        " does not match model input_dim ", model.spec().input_dim, " and ",
        batch.size(), " labels"));
  }
  for (int y : batch.labels) {
    if (y < 0 || static_cast<size_t>(y) >= model.spec().num_classes) {
      return absl::InvalidArgumentError(
          absl::StrCat("label ", y, " outside class range"));
    }
  }
  return absl::OkStatus();
}

namespace {

absl::Status CheckParams(const Model& model, const ParamVector& params) {
  if (params.dim() != model.dim() || !(params.layout() == *model.layout())) {
    return absl::InvalidArgumentError("parameter layout does not match model");
  }
  if (!params.AllFinite()) {
    return absl::OutOfRangeError("parameters contain non-finite values");
  }
  return absl::OkStatus();
}

}  // namespace

absl::StatusOr<LossResult> ForwardLoss(const Model& model,
                                       const ParamVector& params,
                                       const Batch& batch) {
  if (absl::Status s = CheckParams(model, params); !s.ok()) return s;
  if (absl::Status s = CheckBatch(model, batch); !s.ok()) return s;
  LossResult result;
  result.per_sample.resize(batch.size());
  Workspace ws = model.MakeWorkspace();
  double total = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    result.per_sample[i] =
        model.SampleLoss(params, batch.inputs.row(i), batch.labels[i], ws);
    total += result.per_sample[i];
  }
  result.loss = batch.size() == 0 ? 0.0 : total / batch.size();
  if (!std::isfinite(result.loss)) {
    return absl::OutOfRangeError("loss is not finite");
  }
  return result;
}

absl::StatusOr<std::vector<ParamVector>> PerSampleGrad(
    const Model& model, const ParamVector& params, const Batch& batch) {
  if (absl::Status s = CheckParams(model, params); !s.ok()) return s;
  if (absl::Status s = CheckBatch(model, batch); !s.ok()) return s;
  return PerSampleGradientsParallel(model, params, batch);
}

absl::StatusOr<ParamVector> BatchGradient(const Model& model,
                                          const ParamVector& params,
                                          const Batch& batch) {
  if (absl::Status s = CheckParams(model, params); !s.ok()) return s;
  if (absl::Status s = CheckBatch(model, batch); !s.ok()) return s;
  ParamVector grad(model.layout());
  if (batch.size() == 0) return grad;
  std::vector<double> g(model.dim());
  Workspace ws = model.MakeWorkspace();
  for (size_t i = 0; i < batch.size(); ++i) {
    model.SampleGradient(params, batch.inputs.row(i), batch.labels[i], g, ws);
    for (size_t j = 0; j < g.size(); ++j) grad[j] += g[j];
  }
  for (double& v : grad.values()) v /= static_cast<double>(batch.size());
  return grad;
}

absl::StatusOr<double> Evaluate(const Model& model, const ParamVector& params,
                                const Dataset& dataset) {
  if (dataset.size() == 0) {
    return absl::InvalidArgumentError("cannot evaluate on an empty dataset");
  }
  if (absl::Status s = CheckParams(model, params); !s.ok()) return s;
  if (dataset.features.cols != model.spec().input_dim) {
    return absl::InvalidArgumentError("dataset features do not match model");
  }
  Workspace ws = model.MakeWorkspace();
  size_t correct = 0;
  for (size_t i = 0; i < dataset.size(); ++i) {
    if (model.Predict(params, dataset.features.row(i), ws) ==
        dataset.labels[i]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

}  // namespace dpsparse
