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

#include "dpsparse/persistence.h"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

#include "absl/strings/str_cat.h"
#include "dpsparse/status_macros.h"

namespace dpsparse {
namespace {

using nlohmann::json;

constexpr std::string_view kMaskMagic = "DPSMASK1";
constexpr std::string_view kParamsMagic = "DPSPARM1";

void PutU32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

void PutU64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

uint64_t GetLe(std::string_view bytes, size_t pos, int width) {
  uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<uint64_t>(static_cast<uint8_t>(bytes[pos + i])) << (8 * i);
  }
  return v;
}

absl::Status Corrupt(std::string_view what, size_t offset,
                     std::string_view msg) {
  return absl::DataLossError(
      absl::StrCat(std::string(what), " file, byte offset ", offset, ": ",
                   std::string(msg)));
}

std::string Frame(std::string_view magic, const json& header) {
  const std::string text = header.dump();
  std::string out(magic);
  PutU32(out, static_cast<uint32_t>(text.size()));
  out += text;
  return out;
}

// Checks magic and trailer, parses the header. `payload_begin` receives the
// offset just past the header; the payload ends 8 bytes before the end.
absl::StatusOr<json> Unframe(std::string_view bytes, std::string_view magic,
                             std::string_view what, size_t* payload_begin) {
  if (bytes.size() < magic.size() + 4 + 8) {
    return Corrupt(what, bytes.size(), "file too short");
  }
  if (bytes.substr(0, magic.size()) != magic) {
    return Corrupt(what, 0, "bad magic");
  }
  const size_t trailer = bytes.size() - 8;
  const uint64_t stored = GetLe(bytes, trailer, 8);
  if (stored != Fnv1a64(bytes.substr(0, trailer))) {
    return Corrupt(what, trailer, "checksum mismatch");
  }
  const size_t len = GetLe(bytes, magic.size(), 4);
  const size_t begin = magic.size() + 4;
  if (len > trailer - begin) {
    return Corrupt(what, magic.size(), "header length past end of file");
  }
  json header = json::parse(bytes.substr(begin, len), nullptr, false);
  if (header.is_discarded() || !header.is_object()) {
    return Corrupt(what, begin, "header is not a JSON object");
  }
  *payload_begin = begin + len;
  return header;
}

absl::StatusOr<SegmentKind> ParseSegmentKind(std::string_view s) {
  for (SegmentKind k : {SegmentKind::kWeightMatrix, SegmentKind::kBias,
                        SegmentKind::kNormScale}) {
    if (SegmentKindName(k) == s) return k;
  }
  return absl::DataLossError(absl::StrCat("unknown segment kind \"", std::string(s), "\""));
}

}  // namespace

uint64_t Fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

json LayoutToJson(const ParamLayout& layout) {
  json segs = json::array();
  for (const Segment& s : layout.segments()) {
    segs.push_back({{"name", s.name},
                    {"kind", std::string(SegmentKindName(s.kind))},
                    {"rows", s.rows},
                    {"cols", s.cols},
                    {"head", s.classifier_head}});
  }
  return segs;
}

absl::StatusOr<std::shared_ptr<const ParamLayout>> LayoutFromJson(
    const json& j) {
  if (!j.is_array()) return absl::DataLossError("segments must be an array");
  auto layout = std::make_shared<ParamLayout>();
  try {
    for (const json& s : j) {
      ASSIGN_OR_RETURN(SegmentKind kind,
                       ParseSegmentKind(s.at("kind").get<std::string>()));
      layout->AddSegment(s.at("name").get<std::string>(), kind,
                         s.at("rows").get<size_t>(), s.at("cols").get<size_t>(),
                         s.at("head").get<bool>());
    }
  } catch (const std::exception& e) {
    return absl::DataLossError(absl::StrCat("bad segment table: ", e.what()));
  }
  return std::shared_ptr<const ParamLayout>(std::move(layout));
}

std::string SerializeMask(const Mask& mask, const MaskMetadata& meta) {
  const Grouping& g = *mask.grouping();
  const TrainableKinds k = mask.trainable_kinds();
  json layers = json::array();
  const ParamLayout& layout = mask.layout();
  for (size_t l = 0; l < g.num_layers(); ++l) {
    layers.push_back(
        {{"name", layout.segment(layout.maskable_segments()[l]).name},
         {"groups", g.layer_end(l) - g.layer_begin(l)}});
  }
  json header = {
      {"version", 1},
      {"fingerprint", layout.Fingerprint()},
      {"segments", LayoutToJson(layout)},
      {"grouping",
       {{"kind", std::string(GroupingKindName(g.kind()))},
        {"block_size", g.block_size()},
        {"seed", g.seed()},
        {"num_groups", g.num_groups()}}},
      {"layers", layers},
      {"trainable_kinds",
       {{"bias", k.bias}, {"norm_scale", k.norm_scale}, {"head", k.head}}},
      {"strategy", meta.strategy},
      {"sparsity", meta.sparsity},
      {"seed", meta.seed},
      {"ledger", LedgerToJson(meta.ledger, meta.delta)}};
  std::string out = Frame(kMaskMagic, header);
  for (size_t l = 0; l < g.num_layers(); ++l) {
    const size_t n = g.layer_end(l) - g.layer_begin(l);
    std::string bits((n + 7) / 8, '\0');
    for (size_t i = 0; i < n; ++i) {
      if (mask.group_selected(g.layer_begin(l) + i)) {
        bits[i / 8] = static_cast<char>(bits[i / 8] | (1u << (i % 8)));
      }
    }
    out += bits;
  }
  PutU64(out, Fnv1a64(out));
  return out;
}

absl::StatusOr<LoadedMask> ParseMask(std::string_view bytes) {
  size_t pos = 0;
  ASSIGN_OR_RETURN(json header, Unframe(bytes, kMaskMagic, "mask", &pos));
  const size_t end = bytes.size() - 8;
  try {
    if (header.at("version").get<int>() != 1) {
      return Corrupt("mask", kMaskMagic.size() + 4, "unsupported version");
    }
    ASSIGN_OR_RETURN(std::shared_ptr<const ParamLayout> layout,
                     LayoutFromJson(header.at("segments")));
    if (layout->Fingerprint() != header.at("fingerprint").get<std::string>()) {
      return Corrupt("mask", kMaskMagic.size() + 4,
                     "fingerprint does not match segment table");
    }
    const json& gj = header.at("grouping");
    absl::StatusOr<GroupingKind> kind =
        ParseGroupingKind(gj.at("kind").get<std::string>());
    if (!kind.ok()) return absl::DataLossError(kind.status().message());
    ASSIGN_OR_RETURN(Grouping grouping,
                     Grouping::Make(*kind, *layout,
                                    gj.at("block_size").get<size_t>(),
                                    gj.at("seed").get<uint64_t>()));
    if (grouping.num_groups() != gj.at("num_groups").get<size_t>()) {
      return absl::DataLossError("mask file: group count mismatch");
    }
    const json& lj = header.at("layers");
    if (lj.size() != grouping.num_layers()) {
      return absl::DataLossError("mask file: layer count mismatch");
    }
    const json& kj = header.at("trainable_kinds");
    TrainableKinds kinds{kj.at("bias").get<bool>(),
                         kj.at("norm_scale").get<bool>(),
                         kj.at("head").get<bool>()};
    auto gptr = std::make_shared<const Grouping>(std::move(grouping));
    Mask mask(layout, gptr, kinds);
    for (size_t l = 0; l < gptr->num_layers(); ++l) {
      const size_t n = gptr->layer_end(l) - gptr->layer_begin(l);
      if (lj[l].at("groups").get<size_t>() != n) {
        return absl::DataLossError(absl::StrCat(
            "mask file: layer ", l, " group count does not match grouping"));
      }
      const size_t nbytes = (n + 7) / 8;
      if (pos + nbytes > end) {
        return Corrupt("mask", pos, "bit array truncated");
      }
      for (size_t i = 0; i < n; ++i) {
        const uint8_t byte = static_cast<uint8_t>(bytes[pos + i / 8]);
        if ((byte >> (i % 8)) & 1u) mask.SetGroup(gptr->layer_begin(l) + i, true);
      }
      if (n % 8 != 0 &&
          (static_cast<uint8_t>(bytes[pos + nbytes - 1]) >> (n % 8)) != 0) {
        return Corrupt("mask", pos + nbytes - 1, "padding bits set");
      }
      pos += nbytes;
    }
    if (pos != end) return Corrupt("mask", pos, "trailing bytes");
    MaskMetadata meta;
    meta.strategy = header.at("strategy").get<std::string>();
    meta.sparsity = header.at("sparsity").get<double>();
    meta.seed = header.at("seed").get<uint64_t>();
    const json& ledger = header.at("ledger");
    meta.delta = ledger.at("delta").get<double>();
    absl::StatusOr<PrivacyLedger> parsed = LedgerFromJson(ledger);
    if (!parsed.ok()) return absl::DataLossError(parsed.status().message());
    meta.ledger = *std::move(parsed);
    return LoadedMask{std::move(mask), std::move(meta), std::move(header)};
  } catch (const json::exception& e) {
    return absl::DataLossError(absl::StrCat("mask file header: ", e.what()));
  }
}

std::string SerializeParams(const ParamVector& params) {
  json header = {{"version", 1},
                 {"fingerprint", params.layout().Fingerprint()},
                 {"segments", LayoutToJson(params.layout())},
                 {"dim", params.dim()}};
  std::string out = Frame(kParamsMagic, header);
  for (double v : params.values()) PutU64(out, std::bit_cast<uint64_t>(v));
  PutU64(out, Fnv1a64(out));
  return out;
}

absl::StatusOr<ParamVector> ParseParams(std::string_view bytes) {
  size_t pos = 0;
  ASSIGN_OR_RETURN(json header, Unframe(bytes, kParamsMagic, "params", &pos));
  try {
    ASSIGN_OR_RETURN(std::shared_ptr<const ParamLayout> layout,
                     LayoutFromJson(header.at("segments")));
    if (layout->Fingerprint() != header.at("fingerprint").get<std::string>()) {
      return Corrupt("params", kParamsMagic.size() + 4,
                     "fingerprint does not match segment table");
    }
    const size_t dim = layout->dim();
    if (pos + 8 * dim != bytes.size() - 8) {
      return Corrupt("params", pos, "value array has the wrong length");
    }
    std::vector<double> values(dim);
    for (size_t i = 0; i < dim; ++i) {
      values[i] = std::bit_cast<double>(GetLe(bytes, pos + 8 * i, 8));
    }
    return ParamVector(layout, std::move(values));
  } catch (const json::exception& e) {
    return absl::DataLossError(absl::StrCat("params file header: ", e.what()));
  }
}

absl::StatusOr<std::string> ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot open ", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

absl::Status WriteFileBytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    return absl::PermissionDeniedError(absl::StrCat("cannot write ", path));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) return absl::DataLossError(absl::StrCat("write failed: ", path));
  return absl::OkStatus();
}

}  // namespace dpsparse
