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

#include "dpsparse/kernels.h"

#include <omp.h>

#include <algorithm>
#include <cmath>

namespace dpsparse {
namespace {

constexpr size_t kChunk = 64;

// Applies filter, clipping and transform in place; returns true if clipped.
bool ClipInPlace(std::span<double> g, const ClipOptions& options) {
  if (!options.coordinate_filter.empty()) {
    for (size_t j = 0; j < g.size(); ++j) {
      if (!options.coordinate_filter[j]) g[j] = 0.0;
    }
  }
  double sq = 0.0;
  for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  const double factor = std::max(1.0, norm / options.clip);
  if (factor > 1.0) {
    for (double& v : g) v /= factor;
  }
  switch (options.transform) {
    case GradientTransform::kIdentity:
      break;
    case GradientTransform::kAbsolute:
      for (double& v : g) v = std::fabs(v);
      break;
    case GradientTransform::kSquare:
      for (double& v : g) v = v * v;
      break;
  }
  return factor > 1.0;
}

}  // namespace

int KernelThreads() { return omp_get_max_threads(); }
void SetKernelThreads(int threads) { omp_set_num_threads(std::max(1, threads)); }

std::vector<ParamVector> PerSampleGradientsSerial(const Model& model,
                                                  const ParamVector& params,
                                                  const Batch& batch) {
  std::vector<ParamVector> out;
  out.reserve(batch.size());
  Workspace ws = model.MakeWorkspace();
  for (size_t i = 0; i < batch.size(); ++i) {
    ParamVector g(model.layout());
    model.SampleGradient(params, batch.inputs.row(i), batch.labels[i],
                         g.values(), ws);
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<ParamVector> PerSampleGradientsParallel(const Model& model,
                                                    const ParamVector& params,
                                                    const Batch& batch) {
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  std::vector<ParamVector> out(batch.size(), ParamVector(model.layout()));
#pragma omp parallel
  {
    Workspace ws = model.MakeWorkspace();
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      model.SampleGradient(params, batch.inputs.row(i), batch.labels[i],
                           out[i].values(), ws);
    }
  }
  return out;
}

ClippedSum ClippedGradientSumSerial(const Model& model,
                                    const ParamVector& params,
                                    const Batch& batch,
                                    const ClipOptions& options) {
  ClippedSum result;
  result.sum.assign(model.dim(), 0.0);
  std::vector<double> g(model.dim());
  Workspace ws = model.MakeWorkspace();
  for (size_t i = 0; i < batch.size(); ++i) {
    result.loss_sum +=
        model.SampleGradient(params, batch.inputs.row(i), batch.labels[i], g, ws);
    if (ClipInPlace(g, options)) ++result.clipped;
    for (size_t j = 0; j < g.size(); ++j) result.sum[j] += g[j];
  }
  return result;
}

ClippedSum ClippedGradientSumParallel(const Model& model,
                                      const ParamVector& params,
                                      const Batch& batch,
                                      const ClipOptions& options) {
  ClippedSum result;
  const size_t d = model.dim();
  result.sum.assign(d, 0.0);
  const size_t chunk = std::min(kChunk, std::max<size_t>(batch.size(), 1));
  std::vector<double> buffer(chunk * d);
  std::vector<double> losses(chunk);
  std::vector<uint8_t> was_clipped(chunk);

#pragma omp parallel
  {
    Workspace ws = model.MakeWorkspace();
    for (size_t begin = 0; begin < batch.size(); begin += chunk) {
      const auto count =
          static_cast<std::ptrdiff_t>(std::min(chunk, batch.size() - begin));
#pragma omp for schedule(static)
      for (std::ptrdiff_t k = 0; k < count; ++k) {
        std::span<double> g(buffer.data() + k * d, d);
        const size_t i = begin + k;
        losses[k] = model.SampleGradient(params, batch.inputs.row(i),
                                         batch.labels[i], g, ws);
        was_clipped[k] = ClipInPlace(g, options);
      }
      // Fixed-order reduction: sample by sample, parallel over coordinates.
#pragma omp for schedule(static)
      for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(d); ++j) {
        double acc = result.sum[j];
        for (std::ptrdiff_t k = 0; k < count; ++k) acc += buffer[k * d + j];
        result.sum[j] = acc;
      }
#pragma omp single
      {
        for (std::ptrdiff_t k = 0; k < count; ++k) {
          result.loss_sum += losses[k];
          result.clipped += was_clipped[k];
        }
      }
    }
  }
  return result;
}

}  // namespace dpsparse
