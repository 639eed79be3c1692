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

#include "dpsparse/data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_split.h"
#include "absl/strings/strip.h"
#include "dpsparse/rng.h"

namespace dpsparse {
namespace {

constexpr uint32_t kIdxImageMagic = 0x00000803;
constexpr uint32_t kIdxLabelMagic = 0x00000801;

absl::Status IdxError(std::string_view file, size_t offset,
                      std::string_view what) {
  return absl::DataLossError(
      absl::StrCat(std::string(file), " file, byte offset ", offset, ": ",
                   std::string(what)));
}

absl::StatusOr<uint32_t> ReadBigEndian32(std::span<const uint8_t> bytes,
                                         size_t offset,
                                         std::string_view file) {
  if (bytes.size() < offset + 4) {
    return IdxError(file, bytes.size(),
                    absl::StrCat("truncated header, need ", offset + 4,
                                 " bytes, have ", bytes.size()));
  }
  return (uint32_t{bytes[offset]} << 24) | (uint32_t{bytes[offset + 1]} << 16) |
         (uint32_t{bytes[offset + 2]} << 8) | uint32_t{bytes[offset + 3]};
}

absl::StatusOr<std::vector<uint8_t>> ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot open ", path));
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

void FillUnitGaussian(CounterRng& rng, std::span<double> v) {
  for (double& x : v) x = rng.Gaussian();
}

void ScaleToNorm(std::span<double> v, double norm) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (ss == 0.0) return;
  const double f = norm / std::sqrt(ss);
  for (double& x : v) x *= f;
}

// Samples `n` points: label uniform, cluster uniform within label, features
// = mean + N(0, I).
Dataset SampleMixture(const std::vector<std::vector<double>>& means,
                      int num_classes, int clusters_per_class, size_t n,
                      size_t dim, Split split, CounterRng rng) {
  Dataset ds;
  ds.features = Matrix(n, dim);
  ds.labels.resize(n);
  ds.num_classes = num_classes;
  ds.split = split;
  for (size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.Below(num_classes));
    const int cluster = static_cast<int>(rng.Below(clusters_per_class));
    const std::vector<double>& mean = means[label * clusters_per_class + cluster];
    std::span<double> x = ds.features.row(i);
    for (size_t d = 0; d < dim; ++d) x[d] = mean[d] + rng.Gaussian();
    ds.labels[i] = label;
  }
  return ds;
}

}  // namespace

std::string_view SplitName(Split split) {
  switch (split) {
    case Split::kPretrain:
      return "pretrain";
    case Split::kFinetuneTrain:
      return "finetune-train";
    case Split::kFinetuneTest:
      return "finetune-test";
  }
  return "unknown";
}

absl::StatusOr<NormStats> FitNormalization(const Matrix& features) {
  if (features.rows == 0) {
    return absl::InvalidArgumentError("cannot fit normalization on 0 rows");
  }
  NormStats stats;
  stats.mean.assign(features.cols, 0.0);
  stats.stddev.assign(features.cols, 0.0);
  for (size_t i = 0; i < features.rows; ++i) {
    std::span<const double> x = features.row(i);
    for (size_t d = 0; d < features.cols; ++d) stats.mean[d] += x[d];
  }
  for (double& m : stats.mean) m /= static_cast<double>(features.rows);
  for (size_t i = 0; i < features.rows; ++i) {
    std::span<const double> x = features.row(i);
    for (size_t d = 0; d < features.cols; ++d) {
      const double c = x[d] - stats.mean[d];
      stats.stddev[d] += c * c;
    }
  }
  for (double& s : stats.stddev) {
    s = std::sqrt(s / static_cast<double>(features.rows));
    if (!(s > 1e-12)) s = 1.0;
  }
  return stats;
}

absl::Status ApplyNormalization(const NormStats& stats, Dataset& dataset) {
  if (stats.mean.size() != dataset.dim() ||
      stats.stddev.size() != dataset.dim()) {
    return absl::InvalidArgumentError(
        absl::StrCat("normalization stats have ", stats.mean.size(),
                     " dims, dataset has ", dataset.dim()));
  }
  for (size_t i = 0; i < dataset.size(); ++i) {
    std::span<double> x = dataset.features.row(i);
    for (size_t d = 0; d < x.size(); ++d) {
      x[d] = (x[d] - stats.mean[d]) / stats.stddev[d];
    }
  }
  dataset.norm = stats;
  return absl::OkStatus();
}

absl::StatusOr<Dataset> ParseIdx(std::span<const uint8_t> images,
                                 std::span<const uint8_t> labels,
                                 Split split) {
  absl::StatusOr<uint32_t> magic = ReadBigEndian32(images, 0, "image");
  if (!magic.ok()) return magic.status();
  if (*magic != kIdxImageMagic) {
    return IdxError("image", 0,
                    absl::StrCat("bad magic 0x", absl::Hex(*magic, absl::kZeroPad8),
                                 ", expected 0x00000803"));
  }
  absl::StatusOr<uint32_t> count = ReadBigEndian32(images, 4, "image");
  if (!count.ok()) return count.status();
  absl::StatusOr<uint32_t> rows = ReadBigEndian32(images, 8, "image");
  if (!rows.ok()) return rows.status();
  absl::StatusOr<uint32_t> cols = ReadBigEndian32(images, 12, "image");
  if (!cols.ok()) return cols.status();

  absl::StatusOr<uint32_t> label_magic = ReadBigEndian32(labels, 0, "label");
  if (!label_magic.ok()) return label_magic.status();
  if (*label_magic != kIdxLabelMagic) {
    return IdxError(
        "label", 0,
        absl::StrCat("bad magic 0x", absl::Hex(*label_magic, absl::kZeroPad8),
                     ", expected 0x00000801"));
  }
  absl::StatusOr<uint32_t> label_count = ReadBigEndian32(labels, 4, "label");
  if (!label_count.ok()) return label_count.status();
  if (*label_count != *count) {
    return IdxError("label", 4,
                    absl::StrCat("label count ", *label_count,
                                 " does not match image count ", *count));
  }

  const size_t dim = size_t{*rows} * size_t{*cols};
  const size_t image_bytes = 16 + size_t{*count} * dim;
  if (images.size() < image_bytes) {
    return IdxError("image", images.size(),
                    absl::StrCat("truncated pixel data, expected ", image_bytes,
                                 " bytes"));
  }
  if (images.size() > image_bytes) {
    return IdxError("image", image_bytes, "trailing bytes after pixel data");
  }
  const size_t label_bytes = 8 + size_t{*count};
  if (labels.size() < label_bytes) {
    return IdxError("label", labels.size(),
                    absl::StrCat("truncated label data, expected ", label_bytes,
                                 " bytes"));
  }
  if (labels.size() > label_bytes) {
    return IdxError("label", label_bytes, "trailing bytes after label data");
  }

  Dataset ds;
  ds.split = split;
  ds.features = Matrix(*count, dim);
  ds.labels.resize(*count);
  for (size_t i = 0; i < dim * *count; ++i) {
    ds.features.data[i] = images[16 + i] / 255.0;
  }
  int max_label = -1;
  for (size_t i = 0; i < *count; ++i) {
    ds.labels[i] = labels[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = max_label + 1;
  return ds;
}

absl::StatusOr<Dataset> LoadIdx(const std::string& images_path,
                                const std::string& labels_path, Split split) {
  absl::StatusOr<std::vector<uint8_t>> images = ReadFile(images_path);
  if (!images.ok()) return images.status();
  absl::StatusOr<std::vector<uint8_t>> labels = ReadFile(labels_path);
  if (!labels.ok()) return labels.status();
  return ParseIdx(*images, *labels, split);
}

absl::StatusOr<Dataset> ParseCsv(std::string_view input, Split split) {
  const absl::string_view text(input.data(), input.size());
  std::vector<absl::string_view> lines =
      absl::StrSplit(text, '\n', absl::SkipWhitespace());
  if (lines.empty()) return absl::DataLossError("CSV: empty input");
  std::vector<absl::string_view> header = absl::StrSplit(lines[0], ',');
  int label_col = -1;
  for (size_t c = 0; c < header.size(); ++c) {
    if (absl::StripAsciiWhitespace(header[c]) == "label") {
      label_col = static_cast<int>(c);
    }
  }
  if (label_col < 0) {
    return absl::DataLossError("CSV line 1: no column named \"label\"");
  }
  Dataset ds;
  ds.split = split;
  const size_t dim = header.size() - 1;
  ds.features = Matrix(lines.size() - 1, dim);
  int max_label = -1;
  for (size_t r = 1; r < lines.size(); ++r) {
    std::vector<absl::string_view> cells = absl::StrSplit(lines[r], ',');
    if (cells.size() != header.size()) {
      return absl::DataLossError(absl::StrCat(
          "CSV line ", r + 1, ": expected ", header.size(), " fields, got ",
          cells.size()));
    }
    size_t d = 0;
    for (size_t c = 0; c < cells.size(); ++c) {
      const absl::string_view cell = absl::StripAsciiWhitespace(cells[c]);
      if (static_cast<int>(c) == label_col) {
        int label = 0;
        if (!absl::SimpleAtoi(cell, &label) || label < 0) {
          return absl::DataLossError(absl::StrCat(
              "CSV line ", r + 1, ": bad label \"", cell, "\""));
        }
        ds.labels.push_back(label);
        max_label = std::max(max_label, label);
      } else {
        double v = 0.0;
        if (!absl::SimpleAtod(cell, &v) || !std::isfinite(v)) {
          return absl::DataLossError(absl::StrCat(
              "CSV line ", r + 1, ", column ", c + 1, ": bad number \"", cell,
              "\""));
        }
        ds.features.at(r - 1, d++) = v;
      }
    }
  }
  ds.num_classes = max_label + 1;
  return ds;
}

absl::StatusOr<Dataset> LoadCsv(const std::string& path, Split split) {
  absl::StatusOr<std::vector<uint8_t>> bytes = ReadFile(path);
  if (!bytes.ok()) return bytes.status();
  return ParseCsv(std::string_view(reinterpret_cast<const char*>(bytes->data()),
                                   bytes->size()),
                  split);
}

absl::Status TransferTaskSpec::Validate() const {
  if (input_dim == 0) return absl::InvalidArgumentError("input_dim must be > 0");
  if (num_classes < 2 || pretrain_classes < 2) {
    return absl::InvalidArgumentError("tasks need at least 2 classes");
  }
  if (clusters_per_class < 1) {
    return absl::InvalidArgumentError("clusters_per_class must be >= 1");
  }
  if (!(separation > 0.0) || !(pretrain_separation > 0.0)) {
    return absl::InvalidArgumentError("separations must be > 0");
  }
  if (!(planted_fraction >= 0.0 && planted_fraction <= 1.0)) {
    return absl::InvalidArgumentError("planted_fraction must lie in [0, 1]");
  }
  if (!(relatedness >= 0.0 && relatedness <= 1.0)) {
    return absl::InvalidArgumentError("relatedness must lie in [0, 1]");
  }
  if (n_pretrain == 0 || n_train == 0 || n_test == 0) {
    return absl::InvalidArgumentError("every split needs at least one sample");
  }
  return absl::OkStatus();
}

absl::StatusOr<TransferTask> SynthTransferTask(const TransferTaskSpec& spec,
                                               uint64_t seed) {
  if (absl::Status s = spec.Validate(); !s.ok()) return s;
  const size_t dim = spec.input_dim;
  CounterRng rng(seed * 4, RngStream::kData);

  TransferTask task;
  std::vector<size_t> order(dim);
  std::iota(order.begin(), order.end(), 0);
  size_t planted = dim;
  if (spec.planted_fraction > 0.0) {
    planted = std::max<size_t>(
        1, static_cast<size_t>(std::lround(spec.planted_fraction * dim)));
    for (size_t i = 0; i < planted; ++i) {
      std::swap(order[i], order[i + rng.Below(dim - i)]);
    }
  }
  task.planted_dims.assign(order.begin(), order.begin() + planted);
  std::sort(task.planted_dims.begin(), task.planted_dims.end());

  const int finetune_means = spec.num_classes * spec.clusters_per_class;
  std::vector<std::vector<double>> means(finetune_means,
                                         std::vector<double>(dim, 0.0));
  std::vector<double> buf(planted);
  for (auto& mean : means) {
    FillUnitGaussian(rng, buf);
    ScaleToNorm(buf, spec.separation);
    for (size_t i = 0; i < planted; ++i) mean[task.planted_dims[i]] = buf[i];
  }

  std::vector<std::vector<double>> pretrain_means(spec.pretrain_classes,
                                                  std::vector<double>(dim));
  std::vector<double> fresh(dim);
  const double fresh_weight =
      std::sqrt(1.0 - spec.relatedness * spec.relatedness);
  for (auto& mean : pretrain_means) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (const auto& m : means) {
      const double coef = rng.Gaussian();
      for (size_t d = 0; d < dim; ++d) mean[d] += coef * m[d];
    }
    ScaleToNorm(mean, spec.relatedness);
    FillUnitGaussian(rng, fresh);
    ScaleToNorm(fresh, fresh_weight);
    for (size_t d = 0; d < dim; ++d) mean[d] += fresh[d];
    ScaleToNorm(mean, spec.pretrain_separation);
  }

  task.pretrain = SampleMixture(pretrain_means, spec.pretrain_classes, 1,
                                spec.n_pretrain, dim, Split::kPretrain,
                                CounterRng(seed * 4 + 1, RngStream::kData));
  task.train = SampleMixture(means, spec.num_classes, spec.clusters_per_class,
                             spec.n_train, dim, Split::kFinetuneTrain,
                             CounterRng(seed * 4 + 2, RngStream::kData));
  task.test = SampleMixture(means, spec.num_classes, spec.clusters_per_class,
                            spec.n_test, dim, Split::kFinetuneTest,
                            CounterRng(seed * 4 + 3, RngStream::kData));

  absl::StatusOr<NormStats> pre_stats = FitNormalization(task.pretrain.features);
  if (!pre_stats.ok()) return pre_stats.status();
  if (absl::Status s = ApplyNormalization(*pre_stats, task.pretrain); !s.ok()) {
    return s;
  }
  absl::StatusOr<NormStats> stats = FitNormalization(task.train.features);
  if (!stats.ok()) return stats.status();
  if (absl::Status s = ApplyNormalization(*stats, task.train); !s.ok()) return s;
  if (absl::Status s = ApplyNormalization(*stats, task.test); !s.ok()) return s;
  return task;
}

}  // namespace dpsparse
