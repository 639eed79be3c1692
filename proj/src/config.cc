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

#include "dpsparse/config.h"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "absl/strings/str_cat.h"
#include "dpsparse/status_macros.h"

namespace dpsparse {
namespace {

using nlohmann::json;

// Typed access to one JSON object with a path prefix for error messages.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {}

  absl::Status Check(std::initializer_list<const char*> allowed) const {
    if (!obj_.is_object()) {
      return absl::InvalidArgumentError(
          absl::StrCat(path_.empty() ? "config" : path_, " must be an object"));
    }
    for (const auto& item : obj_.items()) {
      bool known = false;
      for (const char* key : allowed) known = known || item.key() == key;
      if (!known) {
        return absl::InvalidArgumentError(
            absl::StrCat("unknown config key \"", Name(item.key()), "\""));
      }
    }
    return absl::OkStatus();
  }

  bool Has(const char* key) const { return obj_.contains(key); }
  const json& At(const char* key) const { return obj_.at(key); }
  std::string Name(std::string_view key) const {
    return path_.empty() ? std::string(key) : absl::StrCat(path_, ".", std::string(key));
  }

  template <typename T>
  absl::Status Get(const char* key, T& out) const {
    if (!obj_.contains(key)) return absl::OkStatus();
    const json& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::runtime_error("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::runtime_error("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<int64_t>() < 0) throw std::runtime_error("must be >= 0");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::runtime_error("expected a number");
      } else {
        if (!v.is_string()) throw std::runtime_error("expected a string");
      }
      out = v.get<T>();
    } catch (const std::exception& e) {
      return absl::InvalidArgumentError(
          absl::StrCat("config key \"", Name(key), "\": ", e.what()));
    }
    return absl::OkStatus();
  }

 private:
  const json& obj_;
  std::string path_;
};

absl::Status ReadSynth(const Reader& r, TransferTaskSpec& s) {
  RETURN_IF_ERROR(r.Check(
      {"input_dim", "num_classes", "pretrain_classes", "clusters_per_class",
       "separation", "pretrain_separation", "planted_fraction", "relatedness",
       "n_pretrain", "n_train", "n_test"}));
  RETURN_IF_ERROR(r.Get("input_dim", s.input_dim));
  RETURN_IF_ERROR(r.Get("num_classes", s.num_classes));
  RETURN_IF_ERROR(r.Get("pretrain_classes", s.pretrain_classes));
  RETURN_IF_ERROR(r.Get("clusters_per_class", s.clusters_per_class));
  RETURN_IF_ERROR(r.Get("separation", s.separation));
  RETURN_IF_ERROR(r.Get("pretrain_separation", s.pretrain_separation));
  RETURN_IF_ERROR(r.Get("planted_fraction", s.planted_fraction));
  RETURN_IF_ERROR(r.Get("relatedness", s.relatedness));
  RETURN_IF_ERROR(r.Get("n_pretrain", s.n_pretrain));
  RETURN_IF_ERROR(r.Get("n_train", s.n_train));
  RETURN_IF_ERROR(r.Get("n_test", s.n_test));
  return absl::OkStatus();
}

absl::Status ReadData(const Reader& r, DataConfig& d) {
  RETURN_IF_ERROR(r.Check(
      {"source", "seed", "synthetic", "train_images", "train_labels",
       "test_images", "test_labels", "pretrain_images", "pretrain_labels",
       "train_csv", "test_csv", "pretrain_csv"}));
  std::string source = "synthetic";
  RETURN_IF_ERROR(r.Get("source", source));
  if (source == "synthetic") {
    d.source = DataSource::kSynthetic;
  } else if (source == "idx") {
    d.source = DataSource::kIdx;
  } else if (source == "csv") {
    d.source = DataSource::kCsv;
  } else {
    return absl::InvalidArgumentError(
        absl::StrCat("data.source must be synthetic, idx or csv, got \"",
                     source, "\""));
  }
  RETURN_IF_ERROR(r.Get("seed", d.seed));
  if (r.Has("synthetic")) {
    RETURN_IF_ERROR(
        ReadSynth(Reader(r.At("synthetic"), r.Name("synthetic")), d.synth));
  }
  RETURN_IF_ERROR(r.Get("train_images", d.train_images));
  RETURN_IF_ERROR(r.Get("train_labels", d.train_labels));
  RETURN_IF_ERROR(r.Get("test_images", d.test_images));
  RETURN_IF_ERROR(r.Get("test_labels", d.test_labels));
  RETURN_IF_ERROR(r.Get("pretrain_images", d.pretrain_images));
  RETURN_IF_ERROR(r.Get("pretrain_labels", d.pretrain_labels));
  RETURN_IF_ERROR(r.Get("train_csv", d.train_csv));
  RETURN_IF_ERROR(r.Get("test_csv", d.test_csv));
  RETURN_IF_ERROR(r.Get("pretrain_csv", d.pretrain_csv));
  return absl::OkStatus();
}

absl::Status ReadModel(const Reader& r, ModelSpec& m) {
  RETURN_IF_ERROR(r.Check({"hidden", "norm_scale", "conv"}));
  if (r.Has("hidden")) {
    const json& h = r.At("hidden");
    if (!h.is_array()) {
      return absl::InvalidArgumentError("model.hidden must be an array");
    }
    m.hidden.clear();
    for (const json& w : h) {
      if (!w.is_number_integer() || w.get<int64_t>() <= 0) {
        return absl::InvalidArgumentError(
            "model.hidden entries must be positive integers");
      }
      m.hidden.push_back(w.get<size_t>());
    }
  }
  RETURN_IF_ERROR(r.Get("norm_scale", m.norm_scale));
  if (r.Has("conv")) {
    if (r.At("conv").is_null()) {
      m.conv.reset();
    } else {
      Reader c(r.At("conv"), r.Name("conv"));
      RETURN_IF_ERROR(c.Check({"in_channels", "out_channels", "kernel"}));
      ConvSpec conv;
      RETURN_IF_ERROR(c.Get("in_channels", conv.in_channels));
      RETURN_IF_ERROR(c.Get("out_channels", conv.out_channels));
      RETURN_IF_ERROR(c.Get("kernel", conv.kernel));
      m.conv = conv;
    }
  }
  return absl::OkStatus();
}

absl::Status ReadDp(const Reader& r, DpSgdConfig& dp) {
  RETURN_IF_ERROR(r.Check({"clip", "mask_noise_multiplier", "lr",
                               "classifier_lr", "momentum", "schedule",
                               "warmup_fraction", "epochs", "mask_epoch"}));
  RETURN_IF_ERROR(r.Get("clip", dp.clip));
  RETURN_IF_ERROR(r.Get("mask_noise_multiplier", dp.mask_noise_multiplier));
  RETURN_IF_ERROR(r.Get("lr", dp.lr));
  RETURN_IF_ERROR(r.Get("classifier_lr", dp.classifier_lr));
  RETURN_IF_ERROR(r.Get("momentum", dp.momentum));
  std::string schedule = dp.schedule == ScheduleKind::kCosine ? "cosine"
                                                              : "constant";
  RETURN_IF_ERROR(r.Get("schedule", schedule));
  if (schedule == "cosine") {
    dp.schedule = ScheduleKind::kCosine;
  } else if (schedule == "constant") {
    dp.schedule = ScheduleKind::kConstant;
  } else {
    return absl::InvalidArgumentError(
        "dp.schedule must be \"cosine\" or \"constant\"");
  }
  RETURN_IF_ERROR(r.Get("warmup_fraction", dp.warmup_fraction));
  RETURN_IF_ERROR(r.Get("epochs", dp.epochs));
  RETURN_IF_ERROR(r.Get("mask_epoch", dp.mask_epoch));
  return absl::OkStatus();
}

}  // namespace

absl::StatusOr<TrainConfig> TrainConfigFromJson(const json& j) {
  TrainConfig c;
  Reader r(j, "");
  RETURN_IF_ERROR(r.Check(
      {"strategy", "grouping", "block_size", "sparsity", "epsilon", "sigma",
       "delta", "seeds", "batch_size", "oracle_score", "stacked_updates",
       "planted_units", "model", "data", "pretrain", "dp"}));
  std::string name;
  if (r.Has("strategy")) {
    RETURN_IF_ERROR(r.Get("strategy", name));
    absl::StatusOr<Strategy> s = ParseStrategy(name);
    if (!s.ok()) return s.status();
    c.strategy = *s;
  }
  if (r.Has("grouping")) {
    RETURN_IF_ERROR(r.Get("grouping", name));
    absl::StatusOr<GroupingKind> g = ParseGroupingKind(name);
    if (!g.ok()) return g.status();
    c.grouping = *g;
  }
  RETURN_IF_ERROR(r.Get("block_size", c.block_size));
  RETURN_IF_ERROR(r.Get("sparsity", c.sparsity));
  if (r.Has("epsilon")) {
    double eps = 0.0;
    RETURN_IF_ERROR(r.Get("epsilon", eps));
    c.target_epsilon = eps;
  }
  if (r.Has("sigma")) {
    double sigma = 0.0;
    RETURN_IF_ERROR(r.Get("sigma", sigma));
    c.sigma = sigma;
  }
  RETURN_IF_ERROR(r.Get("delta", c.delta));
  if (r.Has("seeds")) {
    const json& seeds = r.At("seeds");
    if (!seeds.is_array()) {
      return absl::InvalidArgumentError("seeds must be an array of integers");
    }
    c.seeds.clear();
    for (const json& s : seeds) {
      if (!s.is_number_integer() || s.get<int64_t>() < 0) {
        return absl::InvalidArgumentError("seeds must be non-negative integers");
      }
      c.seeds.push_back(s.get<uint64_t>());
    }
  }
  RETURN_IF_ERROR(r.Get("batch_size", c.batch_size));
  if (r.Has("oracle_score")) {
    RETURN_IF_ERROR(r.Get("oracle_score", name));
    if (name == "l1") {
      c.oracle_score = OracleScore::kL1;
    } else if (name == "l2") {
      c.oracle_score = OracleScore::kL2;
    } else {
      return absl::InvalidArgumentError("oracle_score must be \"l1\" or \"l2\"");
    }
  }
  RETURN_IF_ERROR(r.Get("stacked_updates", c.stacked_updates));
  RETURN_IF_ERROR(r.Get("planted_units", c.planted_units));
  if (r.Has("model")) {
    RETURN_IF_ERROR(ReadModel(Reader(r.At("model"), "model"), c.model));
  }
  if (r.Has("data")) {
    RETURN_IF_ERROR(ReadData(Reader(r.At("data"), "data"), c.data));
  }
  if (r.Has("pretrain")) {
    Reader p(r.At("pretrain"), "pretrain");
    RETURN_IF_ERROR(p.Check({"epochs", "batch_size", "lr", "momentum"}));
    RETURN_IF_ERROR(p.Get("epochs", c.pretrain.epochs));
    RETURN_IF_ERROR(p.Get("batch_size", c.pretrain.batch_size));
    RETURN_IF_ERROR(p.Get("lr", c.pretrain.lr));
    RETURN_IF_ERROR(p.Get("momentum", c.pretrain.momentum));
  }
  if (r.Has("dp")) {
    RETURN_IF_ERROR(ReadDp(Reader(r.At("dp"), "dp"), c.dp));
  }
  return c;
}

absl::StatusOr<TrainConfig> LoadTrainConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot open ", path));
  std::stringstream buffer;
  buffer << in.rdbuf();
  json j;
  try {
    j = json::parse(buffer.str());
  } catch (const json::parse_error& e) {
    return absl::DataLossError(
        absl::StrCat(path, ": byte offset ", e.byte, ": ", e.what()));
  }
  return TrainConfigFromJson(j);
}

json TrainConfigToJson(const TrainConfig& c) {
  json j;
  j["strategy"] = std::string(StrategyName(c.strategy));
  j["grouping"] = std::string(GroupingKindName(c.grouping));
  j["block_size"] = c.block_size;
  j["sparsity"] = c.sparsity;
  if (c.target_epsilon) j["epsilon"] = *c.target_epsilon;
  if (c.sigma) j["sigma"] = *c.sigma;
  j["delta"] = c.delta;
  j["seeds"] = c.seeds;
  j["batch_size"] = c.batch_size;
  j["oracle_score"] = c.oracle_score == OracleScore::kL1 ? "l1" : "l2";
  j["stacked_updates"] = c.stacked_updates;
  j["planted_units"] = c.planted_units;

  json model;
  model["hidden"] = c.model.hidden;
  model["norm_scale"] = c.model.norm_scale;
  if (c.model.conv) {
    model["conv"] = {{"in_channels", c.model.conv->in_channels},
                     {"out_channels", c.model.conv->out_channels},
                     {"kernel", c.model.conv->kernel}};
  }
  j["model"] = model;

  json data;
  const DataConfig& d = c.data;
  data["source"] = d.source == DataSource::kSynthetic ? "synthetic"
                   : d.source == DataSource::kIdx     ? "idx"
                                                      : "csv";
  data["seed"] = d.seed;
  if (d.source == DataSource::kSynthetic) {
    const TransferTaskSpec& s = d.synth;
    data["synthetic"] = {{"input_dim", s.input_dim},
                         {"num_classes", s.num_classes},
                         {"pretrain_classes", s.pretrain_classes},
                         {"clusters_per_class", s.clusters_per_class},
                         {"separation", s.separation},
                         {"pretrain_separation", s.pretrain_separation},
                         {"planted_fraction", s.planted_fraction},
                         {"relatedness", s.relatedness},
                         {"n_pretrain", s.n_pretrain},
                         {"n_train", s.n_train},
                         {"n_test", s.n_test}};
  }
  auto put = [&](const char* key, const std::string& v) {
    if (!v.empty()) data[key] = v;
  };
  put("train_images", d.train_images);
  put("train_labels", d.train_labels);
  put("test_images", d.test_images);
  put("test_labels", d.test_labels);
  put("pretrain_images", d.pretrain_images);
  put("pretrain_labels", d.pretrain_labels);
  put("train_csv", d.train_csv);
  put("test_csv", d.test_csv);
  put("pretrain_csv", d.pretrain_csv);
  j["data"] = data;

  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"batch_size", c.pretrain.batch_size},
                   {"lr", c.pretrain.lr},
                   {"momentum", c.pretrain.momentum}};
  j["dp"] = {{"clip", c.dp.clip},
             {"mask_noise_multiplier", c.dp.mask_noise_multiplier},
             {"lr", c.dp.lr},
             {"classifier_lr", c.dp.classifier_lr},
             {"momentum", c.dp.momentum},
             {"schedule", c.dp.schedule == ScheduleKind::kCosine ? "cosine"
                                                                 : "constant"},
             {"warmup_fraction", c.dp.warmup_fraction},
             {"epochs", c.dp.epochs},
             {"mask_epoch", c.dp.mask_epoch}};
  return j;
}

}  // namespace dpsparse
