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

#include "dpsparse/mask.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "absl/strings/str_cat.h"
#include "dpsparse/rng.h"

namespace dpsparse {

std::string_view GroupingKindName(GroupingKind kind) {
  switch (kind) {
    case GroupingKind::kSingleton:
      return "singleton";
    case GroupingKind::kRow:
      return "row";
    case GroupingKind::kRandomBlocks:
      return "random";
  }
  return "unknown";
}

absl::StatusOr<GroupingKind> ParseGroupingKind(std::string_view name) {
  if (name == "singleton") return GroupingKind::kSingleton;
  if (name == "row") return GroupingKind::kRow;
  if (name == "random") return GroupingKind::kRandomBlocks;
  return absl::InvalidArgumentError(absl::StrCat(
      "unknown grouping \"", std::string(name), "\" (expected singleton, row or random)"));
}

void Grouping::Finish(size_t maskable_dim) {
  group_of_.assign(maskable_dim, 0);
  for (size_t g = 0; g + 1 < offsets_.size(); ++g) {
    for (size_t i = offsets_[g]; i < offsets_[g + 1]; ++i) {
      group_of_[members_[i]] = g;
    }
  }
}

Grouping Grouping::Singleton(const ParamLayout& layout) {
  Grouping g;
  g.kind_ = GroupingKind::kSingleton;
  for (size_t seg : layout.maskable_segments()) {
    const size_t base = layout.maskable_offset(seg);
    for (size_t i = 0; i < layout.segment(seg).size(); ++i) {
      g.members_.push_back(base + i);
      g.offsets_.push_back(g.members_.size());
    }
    g.layer_begin_.push_back(g.offsets_.size() - 1);
  }
  g.Finish(layout.maskable_dim());
  return g;
}

Grouping Grouping::Rows(const ParamLayout& layout) {
  Grouping g;
  g.kind_ = GroupingKind::kRow;
  for (size_t seg : layout.maskable_segments()) {
    const Segment& s = layout.segment(seg);
    const size_t base = layout.maskable_offset(seg);
    for (size_t r = 0; r < s.rows; ++r) {
      for (size_t c = 0; c < s.cols; ++c) g.members_.push_back(base + r * s.cols + c);
      g.offsets_.push_back(g.members_.size());
    }
    g.layer_begin_.push_back(g.offsets_.size() - 1);
  }
  g.Finish(layout.maskable_dim());
  return g;
}

Grouping Grouping::RandomBlocks(const ParamLayout& layout, size_t block_size,
                                uint64_t seed) {
  Grouping g;
  g.kind_ = GroupingKind::kRandomBlocks;
  g.block_size_ = std::max<size_t>(1, block_size);
  g.seed_ = seed;
  CounterRng rng(seed, RngStream::kMask);
  std::vector<size_t> perm;
  for (size_t seg : layout.maskable_segments()) {
    const size_t base = layout.maskable_offset(seg);
    const size_t n = layout.segment(seg).size();
    perm.resize(n);
    std::iota(perm.begin(), perm.end(), base);
    for (size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.Below(i)]);
    for (size_t start = 0; start < n; start += g.block_size_) {
      const size_t end = std::min(n, start + g.block_size_);
      std::sort(perm.begin() + start, perm.begin() + end);
      g.members_.insert(g.members_.end(), perm.begin() + start,
                        perm.begin() + end);
      g.offsets_.push_back(g.members_.size());
    }
    g.layer_begin_.push_back(g.offsets_.size() - 1);
  }
  g.Finish(layout.maskable_dim());
  return g;
}

absl::StatusOr<Grouping> Grouping::Make(GroupingKind kind,
                                        const ParamLayout& layout,
                                        size_t block_size, uint64_t seed) {
  switch (kind) {
    case GroupingKind::kSingleton:
      return Singleton(layout);
    case GroupingKind::kRow:
      return Rows(layout);
    case GroupingKind::kRandomBlocks:
      if (block_size == 0) {
        return absl::InvalidArgumentError("random grouping needs block_size > 0");
      }
      return RandomBlocks(layout, block_size, seed);
  }
  return absl::InvalidArgumentError("unknown grouping kind");
}

absl::Status Grouping::Validate(const ParamLayout& layout) const {
  if (maskable_dim() != layout.maskable_dim()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "grouping covers ", maskable_dim(), " indices, layout has ",
        layout.maskable_dim()));
  }
  if (num_layers() != layout.maskable_segments().size()) {
    return absl::InvalidArgumentError("grouping layer count mismatch");
  }
  std::vector<uint8_t> seen(maskable_dim(), 0);
  for (size_t l = 0; l < num_layers(); ++l) {
    const size_t seg = layout.maskable_segments()[l];
    const size_t lo = layout.maskable_offset(seg);
    const size_t hi = lo + layout.segment(seg).size();
    for (size_t g = layer_begin(l); g < layer_end(l); ++g) {
      for (size_t m : members(g)) {
        if (m < lo || m >= hi) {
          return absl::InvalidArgumentError(
              absl::StrCat("group ", g, " leaves its layer"));
        }
        if (seen[m]++) {
          return absl::InvalidArgumentError(
              absl::StrCat("index ", m, " belongs to two groups"));
        }
      }
    }
  }
  for (size_t m = 0; m < seen.size(); ++m) {
    if (!seen[m]) {
      return absl::InvalidArgumentError(
          absl::StrCat("index ", m, " is not covered"));
    }
  }
  return absl::OkStatus();
}

size_t SparsityBudget::GroupsForLayer(size_t groups_in_layer) const {
  const double k = sparsity * static_cast<double>(groups_in_layer) + 1e-9;
  return std::min(groups_in_layer,
                  static_cast<size_t>(std::max(0.0, std::floor(k))));
}

std::vector<size_t> SparsityBudget::PerLayer(const Grouping& grouping) const {
  std::vector<size_t> k(grouping.num_layers());
  for (size_t l = 0; l < k.size(); ++l) {
    k[l] = GroupsForLayer(grouping.layer_end(l) - grouping.layer_begin(l));
  }
  return k;
}

bool SegmentAlwaysTrainable(const Segment& segment, TrainableKinds kinds) {
  if (segment.classifier_head) return kinds.head;
  switch (segment.kind) {
    case SegmentKind::kBias:
      return kinds.bias;
    case SegmentKind::kNormScale:
      return kinds.norm_scale;
    case SegmentKind::kWeightMatrix:
      return false;
  }
  return false;
}

Mask::Mask(std::shared_ptr<const ParamLayout> layout,
           std::shared_ptr<const Grouping> grouping, TrainableKinds kinds)
    : layout_(std::move(layout)),
      grouping_(std::move(grouping)),
      kinds_(kinds),
      z_(grouping_->num_groups(), 0),
      m_(layout_->maskable_dim(), 0),
      filter_(layout_->dim(), 0) {
  coord_of_.reserve(layout_->maskable_dim());
  for (const Segment& s : layout_->segments()) {
    if (s.maskable()) {
      for (size_t i = 0; i < s.size(); ++i) coord_of_.push_back(s.offset + i);
    } else if (SegmentAlwaysTrainable(s, kinds_)) {
      std::fill_n(filter_.begin() + s.offset, s.size(), 1);
    }
  }
}

void Mask::SetGroup(size_t group, bool selected) {
  const uint8_t bit = selected ? 1 : 0;
  z_[group] = bit;
  for (size_t m : grouping_->members(group)) {
    m_[m] = bit;
    filter_[coord_of_[m]] = bit;
  }
}

void Mask::SelectAllGroups() {
  for (size_t g = 0; g < z_.size(); ++g) SetGroup(g, true);
}

size_t Mask::selected_groups() const {
  return static_cast<size_t>(std::count(z_.begin(), z_.end(), 1));
}

size_t Mask::selected_groups_in_layer(size_t layer) const {
  return static_cast<size_t>(
      std::count(z_.begin() + grouping_->layer_begin(layer),
                 z_.begin() + grouping_->layer_end(layer), 1));
}

size_t Mask::trainable_weights() const {
  return static_cast<size_t>(std::count(m_.begin(), m_.end(), 1));
}

size_t Mask::trainable_coordinates() const {
  return static_cast<size_t>(std::count(filter_.begin(), filter_.end(), 1));
}

std::vector<double> Mask::LayerDensity() const {
  std::vector<double> density;
  for (size_t seg : layout_->maskable_segments()) {
    const size_t lo = layout_->maskable_offset(seg);
    const size_t n = layout_->segment(seg).size();
    const auto on = std::count(m_.begin() + lo, m_.begin() + lo + n, 1);
    density.push_back(n == 0 ? 0.0 : static_cast<double>(on) / n);
  }
  return density;
}

absl::Status Mask::CheckFeasible(const SparsityBudget& budget) const {
  for (size_t m = 0; m < m_.size(); ++m) {
    if (m_[m] != z_[grouping_->group_of(m)]) {
      return absl::InternalError(
          absl::StrCat("maskable index ", m, " disagrees with its group bit"));
    }
    if (filter_[coord_of_[m]] != m_[m]) {
      return absl::InternalError(
          absl::StrCat("coordinate filter disagrees at maskable index ", m));
    }
  }
  const std::vector<size_t> k = budget.PerLayer(*grouping_);
  for (size_t l = 0; l < k.size(); ++l) {
    if (selected_groups_in_layer(l) > k[l]) {
      return absl::InternalError(absl::StrCat(
          "layer ", l, " selects ", selected_groups_in_layer(l),
          " groups, budget is ", k[l]));
    }
  }
  for (const Segment& s : layout_->segments()) {
    if (s.maskable()) continue;
    const uint8_t want = SegmentAlwaysTrainable(s, kinds_) ? 1 : 0;
    for (size_t i = 0; i < s.size(); ++i) {
      if (filter_[s.offset + i] != want) {
        return absl::InternalError(
            absl::StrCat("segment ", s.name, " has a wrong trainable bit"));
      }
    }
  }
  return absl::OkStatus();
}

bool Mask::operator==(const Mask& other) const {
  return *layout_ == *other.layout_ && kinds_ == other.kinds_ &&
         grouping_->kind() == other.grouping_->kind() && z_ == other.z_ &&
         m_ == other.m_ && filter_ == other.filter_;
}

}  // namespace dpsparse
