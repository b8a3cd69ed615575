// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "numlens/dataset.hpp"
#include "numlens/interventions.hpp"
#include "numlens/lens.hpp"
#include "numlens/model.hpp"
#include "numlens/tokenizer.hpp"

namespace numlens {

struct ModelPaths {
  std::string id;
  std::filesystem::path config;
  std::filesystem::path weights;  // file, directory or shard index
  std::filesystem::path vocab;
  std::filesystem::path merges;
  std::optional<std::filesystem::path> added_tokens;
};

struct InterventionPlan {
  std::string dataset;
  InterventionField field = InterventionField::Operand2;
  std::size_t pairs = 50;  // 0 = every query
  std::uint64_t seed = 0;
  std::vector<std::size_t> layers;  // empty = all
};

/// One JSON file. Relative paths resolve against the file's directory.
struct ExperimentConfig {
  ModelPaths model;
  std::vector<DatasetSpec> datasets;
  std::size_t k = 10;
  std::vector<std::size_t> metric_k = {1, 10};
  std::vector<TokenId> extra_targets;
  bool keep_distributions = false;
  std::vector<InterventionPlan> interventions;
  std::filesystem::path output_dir = "out";
  bool svg = false;
  std::size_t workers = 0;  // 0 = NUMLENS_WORKERS or hardware concurrency

  /// Structural checks plus existence of every referenced input file.
  void validate() const;
  nlohmann::json to_json() const;
  /// Errors: malformed or inconsistent config (Config).
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig from_file(const std::filesystem::path& path);
};

/// Artifact layout under output_dir:
///   data/<dataset>.jsonl             dataset with spec header
///   lens/<dataset>.jsonl             lens records
///   metrics/<dataset>/<figure>.csv   per-figure series
///   interventions/<dataset>_<field>.jsonl, <dataset>_<field>_means.csv
///   summary.json, manifest.json, svg/*.svg
///
/// Each stage reuses an existing artifact when its header matches the current
/// inputs and otherwise regenerates it.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);
  ~Experiment();

  void generate_datasets();
  void run_lens();
  void compute_metrics();
  void run_interventions();
  void write_report();
  /// Hashes every file under output_dir into manifest.json.
  void write_manifest();
  /// All stages in order.
  void run_all();

  const ExperimentConfig& config() const { return config_; }
  /// Receives one line per stage decision (reused / regenerated artifacts).
  void set_logger(std::function<void(const std::string&)> logger) { logger_ = std::move(logger); }

 private:
  const Tokenizer& tokenizer();
  const Model& model();
  std::string model_fingerprint();
  const Dataset& dataset(const std::string& name);
  const std::vector<LensRecord>& lens(const std::string& name);
  std::filesystem::path out(const std::filesystem::path& rel) const { return config_.output_dir / rel; }
  void note(std::string msg);

  ExperimentConfig config_;
  std::string config_hash_;
  std::unique_ptr<Tokenizer> tokenizer_;
  std::unique_ptr<Model> model_;
  std::optional<std::string> fingerprint_;
  std::map<std::string, Dataset> datasets_;
  std::map<std::string, std::vector<LensRecord>> lens_;
  std::function<void(const std::string&)> logger_;
};

inline constexpr const char* kMetricsCsvSchema = "numlens.metrics-csv/1";
inline constexpr const char* kSummarySchema = "numlens.summary/1";
inline constexpr const char* kManifestSchema = "numlens.manifest/1";

/// Writes bytes to path (creating parent directories) via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace numlens
