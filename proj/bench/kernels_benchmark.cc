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

// Serial reference versus OpenMP per-sample gradient kernels.

#include <cstdint>
#include <cstdlib>

#include "benchmark/benchmark.h"
#include "dpsparse/kernels.h"
#include "dpsparse/model.h"
#include "dpsparse/rng.h"

namespace dpsparse {
namespace {

struct Fixture {
  Model model;
  ParamVector params;
  Batch batch;
};

Fixture MakeFixture(size_t batch_size, size_t width) {
  ModelSpec spec;
  spec.input_dim = 64;
  spec.num_classes = 4;
  spec.hidden = {width};
  spec.norm_scale = true;
  absl::StatusOr<Model> model = Model::Create(spec);
  if (!model.ok()) std::abort();
  ParamVector params = model->Init(1);
  Batch batch;
  batch.inputs = Matrix(batch_size, spec.input_dim);
  CounterRng rng(2, RngStream::kData);
  for (double& x : batch.inputs.data) x = rng.Gaussian();
  for (size_t i = 0; i < batch_size; ++i) {
    batch.labels.push_back(static_cast<int>(rng.Below(spec.num_classes)));
    batch.sample_ids.push_back(i);
  }
  return {*std::move(model), std::move(params), std::move(batch)};
}

template <bool kParallel>
void BM_ClippedSum(benchmark::State& state) {
  const Fixture f = MakeFixture(static_cast<size_t>(state.range(0)),
                                static_cast<size_t>(state.range(1)));
  ClipOptions opts;
  opts.clip = 1.0;
  for (auto _ : state) {
    ClippedSum s = kParallel
                       ? ClippedGradientSumParallel(f.model, f.params, f.batch,
                                                    opts)
                       : ClippedGradientSumSerial(f.model, f.params, f.batch,
                                                  opts);
    benchmark::DoNotOptimize(s.sum.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.counters["threads"] = kParallel ? KernelThreads() : 1;
}

template <bool kParallel>
void BM_PerSample(benchmark::State& state) {
  const Fixture f = MakeFixture(static_cast<size_t>(state.range(0)),
                                static_cast<size_t>(state.range(1)));
  for (auto _ : state) {
    auto g = kParallel ? PerSampleGradientsParallel(f.model, f.params, f.batch)
                       : PerSampleGradientsSerial(f.model, f.params, f.batch);
    benchmark::DoNotOptimize(g.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

BENCHMARK(BM_ClippedSum<false>)->Args({500, 128})->Args({2000, 256});
BENCHMARK(BM_ClippedSum<true>)->Args({500, 128})->Args({2000, 256});
BENCHMARK(BM_PerSample<false>)->Args({500, 128});
BENCHMARK(BM_PerSample<true>)->Args({500, 128});

}  // namespace
}  // namespace dpsparse

BENCHMARK_MAIN();
