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

#include "dpsparse/param_vector.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <utility>

namespace dpsparse {

std::string_view SegmentKindName(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::kWeightMatrix:
      return "weight";
    case SegmentKind::kBias:
      return "bias";
    case SegmentKind::kNormScale:
      return "norm_scale";
  }
  return "unknown";
}

size_t ParamLayout::AddSegment(std::string name, SegmentKind kind, size_t rows,
                               size_t cols, bool classifier_head) {
  if (Find(name) >= 0) {
    throw std::invalid_argument("duplicate segment name: " + name);
  }
  Segment seg{std::move(name), kind, rows, cols, dim_, classifier_head};
  dim_ += seg.size();
  maskable_offset_.push_back(maskable_dim_);
  if (seg.maskable()) {
    maskable_segments_.push_back(segments_.size());
    maskable_dim_ += seg.size();
  }
  segments_.push_back(std::move(seg));
  return segments_.size() - 1;
}

int ParamLayout::Find(std::string_view name) const {
  for (size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

size_t ParamLayout::MaskableToCoordinate(size_t m) const {
  for (size_t seg : maskable_segments_) {
    const size_t begin = maskable_offset_[seg];
    if (m < begin + segments_[seg].size()) {
      return segments_[seg].offset + (m - begin);
    }
  }
  throw std::out_of_range("maskable index out of range");
}

std::string ParamLayout::Fingerprint() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Segment& s : segments_) {
    mix(s.name.data(), s.name.size());
    const uint64_t fields[4] = {static_cast<uint64_t>(s.kind), s.rows, s.cols,
                                s.classifier_head ? 1u : 0u};
    // Serialize explicitly little-endian so the digest is platform stable.
    for (uint64_t f : fields) {
      unsigned char bytes[8];
      for (int b = 0; b < 8; ++b) bytes[b] = (f >> (8 * b)) & 0xff;
      mix(bytes, 8);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout)
    : layout_(std::move(layout)), values_(layout_->dim(), 0.0) {}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout,
                         std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_->dim()) {
    throw std::invalid_argument("value count does not match layout");
  }
}

std::span<double> ParamVector::segment(size_t i) {
  const Segment& s = layout_->segment(i);
  return std::span<double>(values_).subspan(s.offset, s.size());
}

std::span<const double> ParamVector::segment(size_t i) const {
  const Segment& s = layout_->segment(i);
  return std::span<const double>(values_).subspan(s.offset, s.size());
}

bool ParamVector::SameLayout(const ParamVector& other) const {
  if (layout_ == other.layout_) return true;
  if (!layout_ || !other.layout_) return false;
  return *layout_ == *other.layout_;
}

bool ParamVector::AllFinite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double ParamVector::Norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

bool ParamVector::operator==(const ParamVector& other) const {
  return SameLayout(other) && values_.size() == other.values_.size() &&
         std::memcmp(values_.data(), other.values_.data(),
                     values_.size() * sizeof(double)) == 0;
}

}  // namespace dpsparse
