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

#ifndef DPSPARSE_MODEL_H_
#define DPSPARSE_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "dpsparse/matrix.h"
#include "dpsparse/param_vector.h"

namespace dpsparse {

struct Dataset;

// 1-D convolution applied to the input viewed as (in_channels x length),
// valid padding, stride 1. Only allowed as the first layer.
struct ConvSpec {
  size_t in_channels = 1;
  size_t out_channels = 4;
  size_t kernel = 3;
  bool operator==(const ConvSpec&) const = default;
};

// Architecture: optional conv layer, then `hidden` ReLU dense layers, then a
// softmax classifier head. No conv and no hidden layers is multinomial
// logistic regression.
struct ModelSpec {
  size_t input_dim = 0;
  size_t num_classes = 2;
  std::optional<ConvSpec> conv;
  std::vector<size_t> hidden;
  // Adds a per-unit gain ("norm-scale" segment) to every non-head layer.
  bool norm_scale = false;

  absl::Status Validate() const;
  bool operator==(const ModelSpec&) const = default;
};

// A minibatch. Empty batches are legal (Poisson sampling).
struct Batch {
  Matrix inputs;
  std::vector<int> labels;
  std::vector<size_t> sample_ids;

  size_t size() const { return labels.size(); }
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> per_sample;
};

// Scratch buffers for one sample's forward/backward pass. One per thread.
struct Workspace {
  std::vector<std::vector<double>> pre;    // pre-activation per layer
  std::vector<std::vector<double>> post;   // activation per layer
  std::vector<std::vector<double>> gain_in;  // W*a before gain, per layer
  std::vector<double> delta;
  std::vector<double> delta_prev;
};

class Model {
 public:
  static absl::StatusOr<Model> Create(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }
  size_t dim() const { return layout_->dim(); }

  // He-normal weights, zero biases, unit gains.
  ParamVector Init(uint64_t seed) const;
  // Re-draws the classifier head (weights ~ N(0, 1/fan_in), zero bias).
  void ReinitializeHead(ParamVector& params, uint64_t seed) const;

  Workspace MakeWorkspace() const;

  // Cross-entropy loss of one sample.
  double SampleLoss(const ParamVector& params, std::span<const double> x,
                    int label, Workspace& ws) const;
  // Writes d loss / d params into `grad` (size dim()) and returns the loss.
  double SampleGradient(const ParamVector& params, std::span<const double> x,
                        int label, std::span<double> grad,
                        Workspace& ws) const;
  // Argmax class, ties to the lowest index.
  int Predict(const ParamVector& params, std::span<const double> x,
              Workspace& ws) const;

  // Segment indices of the layer that feeds the classifier.
  size_t head_weight_segment() const { return layers_.back().weight_seg; }

 private:
  enum class LayerKind { kConv, kDense };
  struct Layer {
    LayerKind kind;
    size_t in = 0;   // flattened input size
    size_t out = 0;  // flattened output size
    size_t units = 0;  // rows of the weight matrix
    size_t fan_in = 0;  // cols of the weight matrix
    bool relu = true;
    size_t weight_seg = 0;
    size_t bias_seg = 0;
    int scale_seg = -1;
    // conv geometry
    size_t in_channels = 0;
    size_t length = 0;
    size_t out_length = 0;
    size_t kernel = 0;
  };

  Model(ModelSpec spec, std::shared_ptr<const ParamLayout> layout,
        std::vector<Layer> layers)
      : spec_(std::move(spec)),
        layout_(std::move(layout)),
        layers_(std::move(layers)) {}

  // Fills ws.pre/post; returns a view of the logits.
  std::span<const double> Forward(const ParamVector& params,
                                  std::span<const double> x,
                                  Workspace& ws) const;

  ModelSpec spec_;
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<Layer> layers_;
};

absl::Status CheckBatch(const Model& model, const Batch& batch);

// Mean and per-sample cross-entropy. Empty batch -> loss 0.
absl::StatusOr<LossResult> ForwardLoss(const Model& model,
                                       const ParamVector& params,
                                       const Batch& batch);

// One gradient per sample, each with the layout of `params`.
absl::StatusOr<std::vector<ParamVector>> PerSampleGrad(
    const Model& model, const ParamVector& params, const Batch& batch);

// Gradient of the mean loss.
absl::StatusOr<ParamVector> BatchGradient(const Model& model,
                                          const ParamVector& params,
                                          const Batch& batch);

// Fraction of argmax-correct predictions.
absl::StatusOr<double> Evaluate(const Model& model, const ParamVector& params,
                                const Dataset& dataset);

}  // namespace dpsparse

#endif  // DPSPARSE_MODEL_H_
