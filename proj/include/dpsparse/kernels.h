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

#ifndef DPSPARSE_KERNELS_H_
#define DPSPARSE_KERNELS_H_

// Per-sample gradient kernels. Each kernel has an OpenMP version and a serial
// reference. The parallel versions compute per-sample work concurrently but
// always reduce in sample order, so both produce bit-identical results.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "dpsparse/model.h"
#include "dpsparse/param_vector.h"

namespace dpsparse {

enum class GradientTransform {
  kIdentity,  // clipped g
  kAbsolute,  // |clipped g|
  kSquare,    // (clipped g)^2
};

struct ClipOptions {
  // Per-sample l2 bound C; +inf disables clipping.
  double clip = std::numeric_limits<double>::infinity();
  // Coordinates whose filter entry is 0 are dropped before the norm is taken.
  // Empty means every coordinate participates.
  std::span<const uint8_t> coordinate_filter;
  GradientTransform transform = GradientTransform::kIdentity;
};

struct ClippedSum {
  std::vector<double> sum;
  double loss_sum = 0.0;
  size_t clipped = 0;  // samples whose norm exceeded C
};

std::vector<ParamVector> PerSampleGradientsSerial(const Model& model,
                                                  const ParamVector& params,
                                                  const Batch& batch);
std::vector<ParamVector> PerSampleGradientsParallel(const Model& model,
                                                    const ParamVector& params,
                                                    const Batch& batch);

// sum_i T(g_i / max(1, ||g_i||_2 / C)).
ClippedSum ClippedGradientSumSerial(const Model& model,
                                    const ParamVector& params,
                                    const Batch& batch,
                                    const ClipOptions& options);
ClippedSum ClippedGradientSumParallel(const Model& model,
                                      const ParamVector& params,
                                      const Batch& batch,
                                      const ClipOptions& options);

// Thread count used by the parallel kernels.
int KernelThreads();
void SetKernelThreads(int threads);

}  // namespace dpsparse

#endif  // DPSPARSE_KERNELS_H_
