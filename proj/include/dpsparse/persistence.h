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

#ifndef DPSPARSE_PERSISTENCE_H_
#define DPSPARSE_PERSISTENCE_H_

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "dpsparse/accountant.h"
#include "dpsparse/mask.h"
#include "dpsparse/param_vector.h"
#include "json.hpp"

namespace dpsparse {

// Mask file layout, all integers little-endian:
//   "DPSMASK1" | u32 header length | JSON header |
//   per maskable layer: ceil(groups/8) bytes of group bits, LSB first |
//   u64 FNV-1a of everything before it.
// The header carries the layout fingerprint and segment table, grouping
// kind/block/seed, trainable kinds, sparsity, seed, strategy and the ledger.
struct MaskMetadata {
  std::string strategy;
  double sparsity = 0.0;
  uint64_t seed = 0;
  double delta = 1e-5;
  PrivacyLedger ledger;
};

struct LoadedMask {
  Mask mask;
  MaskMetadata metadata;
  nlohmann::json header;
};

std::string SerializeMask(const Mask& mask, const MaskMetadata& metadata);
// Rebuilds layout and grouping from the header and checks them against the
// stored fingerprint and per-layer group counts.
absl::StatusOr<LoadedMask> ParseMask(std::string_view bytes);

// Params file: "DPSPARM1" | u32 header length | JSON header (fingerprint,
// segments) | dim float64 values | u64 FNV-1a trailer.
std::string SerializeParams(const ParamVector& params);
absl::StatusOr<ParamVector> ParseParams(std::string_view bytes);

nlohmann::json LayoutToJson(const ParamLayout& layout);
absl::StatusOr<std::shared_ptr<const ParamLayout>> LayoutFromJson(
    const nlohmann::json& j);

uint64_t Fnv1a64(std::string_view bytes);

absl::StatusOr<std::string> ReadFileBytes(const std::string& path);
absl::Status WriteFileBytes(const std::string& path, std::string_view bytes);

}  // namespace dpsparse

#endif  // DPSPARSE_PERSISTENCE_H_
