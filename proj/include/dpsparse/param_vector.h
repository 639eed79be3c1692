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

#ifndef DPSPARSE_PARAM_VECTOR_H_
#define DPSPARSE_PARAM_VECTOR_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dpsparse {

enum class SegmentKind { kWeightMatrix, kBias, kNormScale };

std::string_view SegmentKindName(SegmentKind kind);

// A named, contiguous slice of the flat parameter store. Weight matrices are
// stored row-major as (rows x cols); bias and norm-scale segments have
// cols == 1.
struct Segment {
  std::string name;
  SegmentKind kind = SegmentKind::kWeightMatrix;
  size_t rows = 0;
  size_t cols = 0;
  size_t offset = 0;
  bool classifier_head = false;

  size_t size() const { return rows * cols; }
  // Only non-head weight matrices take part in mask selection.
  bool maskable() const {
    return kind == SegmentKind::kWeightMatrix && !classifier_head;
  }
  bool operator==(const Segment&) const = default;
};

// Ordered segment table shared (immutably) by every ParamVector of a model.
class ParamLayout {
 public:
  ParamLayout() = default;

  // Appends a segment; returns its index. Names must be unique.
  size_t AddSegment(std::string name, SegmentKind kind, size_t rows,
                    size_t cols, bool classifier_head);

  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment(size_t i) const { return segments_[i]; }
  size_t num_segments() const { return segments_.size(); }
  size_t dim() const { return dim_; }

  // Index of the named segment, or -1.
  int Find(std::string_view name) const;

  // Maskable coordinates are numbered 0..maskable_dim()-1 by concatenating
  // the maskable segments in layout order.
  const std::vector<size_t>& maskable_segments() const {
    return maskable_segments_;
  }
  size_t maskable_dim() const { return maskable_dim_; }
  // Offset of segment `seg` inside the maskable index space.
  size_t maskable_offset(size_t seg) const { return maskable_offset_[seg]; }
  // Full-vector coordinate of maskable index `m`.
  size_t MaskableToCoordinate(size_t m) const;

  // 64-bit FNV-1a digest over names, kinds and shapes, as 16 hex digits.
  std::string Fingerprint() const;

  bool operator==(const ParamLayout& other) const {
    return segments_ == other.segments_;
  }

 private:
  std::vector<Segment> segments_;
  std::vector<size_t> maskable_segments_;
  std::vector<size_t> maskable_offset_;
  size_t dim_ = 0;
  size_t maskable_dim_ = 0;
};

// Flat model-parameter store partitioned into the segments of a layout.
// Also used for gradients, momentum buffers and scores.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::shared_ptr<const ParamLayout> layout);
  ParamVector(std::shared_ptr<const ParamLayout> layout,
              std::vector<double> values);

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const {
    return layout_;
  }
  size_t dim() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& mutable_storage() { return values_; }

  std::span<double> segment(size_t i);
  std::span<const double> segment(size_t i) const;

  double& operator[](size_t i) { return values_[i]; }
  double operator[](size_t i) const { return values_[i]; }

  bool SameLayout(const ParamVector& other) const;
  bool AllFinite() const;
  double Norm() const;

  // Bitwise comparison of values plus layout equality.
  bool operator==(const ParamVector& other) const;

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<double> values_;
};

}  // namespace dpsparse

#endif  // DPSPARSE_PARAM_VECTOR_H_
