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

#ifndef DPSPARSE_MASK_H_
#define DPSPARSE_MASK_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "dpsparse/param_vector.h"

namespace dpsparse {

enum class GroupingKind { kSingleton, kRow, kRandomBlocks };

std::string_view GroupingKindName(GroupingKind kind);
// Accepts "singleton", "row" and "random".
absl::StatusOr<GroupingKind> ParseGroupingKind(std::string_view name);

// Partition of the maskable index space into groups. Groups never straddle
// layers; the groups of maskable layer l occupy the contiguous id range
// [layer_begin(l), layer_end(l)).
class Grouping {
 public:
  static Grouping Singleton(const ParamLayout& layout);
  // One group per row of each 2-D weight matrix.
  static Grouping Rows(const ParamLayout& layout);
  // Each layer's indices are shuffled and cut into blocks of `block_size`;
  // the last block of a layer may be smaller.
  static Grouping RandomBlocks(const ParamLayout& layout, size_t block_size,
                               uint64_t seed);
  static absl::StatusOr<Grouping> Make(GroupingKind kind,
                                       const ParamLayout& layout,
                                       size_t block_size, uint64_t seed);

  GroupingKind kind() const { return kind_; }
  size_t block_size() const { return block_size_; }
  uint64_t seed() const { return seed_; }

  size_t num_groups() const { return offsets_.size() - 1; }
  size_t num_layers() const { return layer_begin_.size() - 1; }
  size_t layer_begin(size_t layer) const { return layer_begin_[layer]; }
  size_t layer_end(size_t layer) const { return layer_begin_[layer + 1]; }
  size_t maskable_dim() const { return group_of_.size(); }

  std::span<const size_t> members(size_t group) const {
    return {members_.data() + offsets_[group],
            offsets_[group + 1] - offsets_[group]};
  }
  size_t group_size(size_t group) const {
    return offsets_[group + 1] - offsets_[group];
  }
  size_t group_of(size_t maskable_index) const {
    return group_of_[maskable_index];
  }

  // Groups are disjoint, cover 0..maskable_dim()-1 and respect layers.
  absl::Status Validate(const ParamLayout& layout) const;

 private:
  Grouping() = default;
  void Finish(size_t maskable_dim);

  GroupingKind kind_ = GroupingKind::kSingleton;
  size_t block_size_ = 1;
  uint64_t seed_ = 0;
  std::vector<size_t> offsets_{0};
  std::vector<size_t> members_;
  std::vector<size_t> group_of_;
  std::vector<size_t> layer_begin_{0};
};

// Non-maskable segments that train regardless of the mask.
struct TrainableKinds {
  bool bias = true;
  bool norm_scale = true;
  bool head = true;

  static TrainableKinds None() { return {false, false, false}; }
  bool operator==(const TrainableKinds&) const = default;
};

// Fraction s of the groups of every layer may be selected:
// k_layer = floor(s * q_layer).
struct SparsityBudget {
  double sparsity = 0.2;

  size_t GroupsForLayer(size_t groups_in_layer) const;
  std::vector<size_t> PerLayer(const Grouping& grouping) const;
};

// Trainable indicator over all parameters. Group bits z live on the
// grouping; maskable bits m are always the expansion of z, so m <= z holds
// by construction.
class Mask {
 public:
  Mask(std::shared_ptr<const ParamLayout> layout,
       std::shared_ptr<const Grouping> grouping, TrainableKinds kinds);

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const {
    return layout_;
  }
  const std::shared_ptr<const Grouping>& grouping() const { return grouping_; }
  TrainableKinds trainable_kinds() const { return kinds_; }

  void SetGroup(size_t group, bool selected);
  void SelectAllGroups();
  bool group_selected(size_t group) const { return z_[group] != 0; }
  std::span<const uint8_t> group_bits() const { return z_; }
  // m over the maskable index space.
  std::span<const uint8_t> maskable_bits() const { return m_; }
  // 1 for every coordinate that training may change, over the full vector.
  std::span<const uint8_t> coordinate_filter() const { return filter_; }

  size_t selected_groups() const;
  size_t selected_groups_in_layer(size_t layer) const;
  size_t trainable_weights() const;  // maskable coordinates with m = 1
  size_t trainable_coordinates() const;
  // Fraction of trainable coordinates per maskable layer.
  std::vector<double> LayerDensity() const;

  // m agrees with the expansion of z, per-layer selections are within the
  // budget, and always-trainable segments are on.
  absl::Status CheckFeasible(const SparsityBudget& budget) const;

  // Same layout, kinds and bits; groupings compared by kind and partition.
  bool operator==(const Mask& other) const;

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::shared_ptr<const Grouping> grouping_;
  TrainableKinds kinds_;
  std::vector<uint8_t> z_;
  std::vector<uint8_t> m_;
  std::vector<uint8_t> filter_;
  std::vector<size_t> coord_of_;  // maskable index -> full coordinate
};

bool SegmentAlwaysTrainable(const Segment& segment, TrainableKinds kinds);

}  // namespace dpsparse

#endif  // DPSPARSE_MASK_H_
