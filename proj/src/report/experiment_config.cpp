// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "numlens/experiment.hpp"

namespace numlens {
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw_error(ErrorKind::Config, fmt::format("{} not found: {}", what, p.string()));
}

}  // namespace

void ExperimentConfig::validate() const {
  if (model.id.empty()) throw_error(ErrorKind::Config, "model.id is required");
  require_file(model.config, "model config");
  require_file(model.weights, "model weights");
  require_file(model.vocab, "vocabulary");
  require_file(model.merges, "merges");
  if (model.added_tokens) require_file(*model.added_tokens, "added tokens");
  if (datasets.empty()) throw_error(ErrorKind::Config, "at least one dataset is required");
  std::set<std::string> names;
  for (const auto& d : datasets) {
    d.validate();
    if (!names.insert(d.name).second) throw_error(ErrorKind::Config, "duplicate dataset name " + d.name);
  }
  if (k == 0) throw_error(ErrorKind::Config, "lens.k must be >= 1");
  for (std::size_t mk : metric_k) {
    if (mk == 0 || mk > k) throw_error(ErrorKind::Config, fmt::format("metrics k {} must lie in [1, lens.k = {}]", mk, k));
  }
  for (const auto& p : interventions) {
    if (!names.count(p.dataset)) throw_error(ErrorKind::Config, "intervention refers to unknown dataset " + p.dataset);
  }
  if (output_dir.empty()) throw_error(ErrorKind::Config, "output_dir is required");
}

json ExperimentConfig::to_json() const {
  json m = {{"id", model.id},
            {"config", model.config.string()},
            {"weights", model.weights.string()},
            {"vocab", model.vocab.string()},
            {"merges", model.merges.string()}};
  if (model.added_tokens) m["added_tokens"] = model.added_tokens->string();
  json ds = json::array();
  for (const auto& d : datasets) ds.push_back(d.to_json());
  json iv = json::array();
  for (const auto& p : interventions) {
    iv.push_back({{"dataset", p.dataset},
                  {"field", field_name(p.field)},
                  {"pairs", p.pairs},
                  {"seed", p.seed},
                  {"layers", p.layers}});
  }
  return {{"model", m},
          {"datasets", ds},
          {"lens", {{"k", k}, {"extra_targets", extra_targets}, {"keep_distributions", keep_distributions}}},
          {"metrics", {{"k", metric_k}}},
          {"interventions", iv},
          {"output_dir", output_dir.string()},
          {"svg", svg},
          {"workers", workers}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base) {
  ExperimentConfig c;
  try {
    const json& m = j.at("model");
    c.model.id = m.at("id").get<std::string>();
    if (m.contains("tokenizer_dir")) {
      const fs::path dir = resolve(base, m["tokenizer_dir"].get<std::string>());
      c.model.vocab = dir / "vocab.json";
      c.model.merges = dir / "merges.txt";
      if (fs::exists(dir / "added_tokens.json")) c.model.added_tokens = dir / "added_tokens.json";
    }
    if (m.contains("checkpoint_dir")) {
      const fs::path dir = resolve(base, m["checkpoint_dir"].get<std::string>());
      c.model.config = dir / "config.json";
      c.model.weights = dir;
    }
    if (m.contains("config")) c.model.config = resolve(base, m["config"].get<std::string>());
    if (m.contains("weights")) c.model.weights = resolve(base, m["weights"].get<std::string>());
    if (m.contains("vocab")) c.model.vocab = resolve(base, m["vocab"].get<std::string>());
    if (m.contains("merges")) c.model.merges = resolve(base, m["merges"].get<std::string>());
    if (m.contains("added_tokens")) c.model.added_tokens = resolve(base, m["added_tokens"].get<std::string>());

    for (const auto& d : j.at("datasets")) c.datasets.push_back(DatasetSpec::from_json(d));
    if (j.contains("lens")) {
      const json& l = j["lens"];
      c.k = l.value("k", c.k);
      c.extra_targets = l.value("extra_targets", c.extra_targets);
      c.keep_distributions = l.value("keep_distributions", false);
    }
    if (j.contains("metrics")) c.metric_k = j["metrics"].value("k", c.metric_k);
    if (j.contains("interventions")) {
      for (const auto& p : j["interventions"]) {
        InterventionPlan plan;
        plan.dataset = p.at("dataset").get<std::string>();
        plan.field = parse_field(p.at("field").get<std::string>());
        plan.pairs = p.value("pairs", plan.pairs);
        plan.seed = p.value("seed", plan.seed);
        plan.layers = p.value("layers", plan.layers);
        c.interventions.push_back(std::move(plan));
      }
    }
    c.output_dir = resolve(base, j.value("output_dir", std::string("out")));
    c.svg = j.value("svg", false);
    c.workers = j.value("workers", std::size_t{0});
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Config, std::string("invalid experiment config: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw_error(ErrorKind::Config, "cannot open experiment config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Config, "cannot parse experiment config " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

}  // namespace numlens
