// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "numlens/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "numlens/hashing.hpp"
#include "numlens/metrics.hpp"
#include "numlens/svg.hpp"

namespace numlens {
using nlohmann::json;
namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw_error(ErrorKind::Runtime, "cannot write " + tmp.string());
    out << bytes;
    if (!out) throw_error(ErrorKind::Runtime, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_error(ErrorKind::Config, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

std::string point_fields(const std::optional<SeriesPoint>& p) {
  if (!p) return "0,null,null,null,null";
  return fmt::format("{},{},{},{},{}", p->n, num(p->mean), num(p->q1), num(p->median), num(p->q3));
}

// Rows "<prefix>layer,site,n,mean,q1,median,q3" for each layer, post_att before post_mlp.
void series_rows(std::string& out, const std::string& prefix, const LayerSeries& att, const LayerSeries& mlp) {
  for (std::size_t l = 0; l < att.values.size(); ++l) {
    out += fmt::format("{}{},post_att,{}\n", prefix, l + 1, point_fields(att.values[l]));
    out += fmt::format("{}{},post_mlp,{}\n", prefix, l + 1, point_fields(mlp.values[l]));
  }
}

constexpr const char* kStatsHeader = "layer,site,n,mean,q1,median,q3\n";

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string csv_text(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Token text with invalid UTF-8 replaced, matching the JSON dumps.
std::string printable(const std::string& s) {
  return json(s).dump(-1, ' ', false, json::error_handler_t::replace);
}

std::string unquote(const std::string& dumped) { return json::parse(dumped).get<std::string>(); }

json frequent_json(const std::vector<FrequentTokenEntry>& entries) {
  json arr = json::array();
  for (const auto& e : entries) {
    arr.push_back({{"layer", e.layer},
                   {"token_id", e.token},
                   {"token", unquote(printable(e.text))},
                   {"mean_probability", e.mean_probability},
                   {"frequency_share", e.frequency_share}});
  }
  return arr;
}

std::string intervention_stem(const InterventionPlan& p) {
  return fmt::format("{}_{}", p.dataset, field_name(p.field));
}

}  // namespace

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) {
  config_.validate();
  // Where the outputs go and how many threads compute them do not change their content.
  json hashed = config_.to_json();
  hashed.erase("output_dir");
  hashed.erase("workers");
  config_hash_ = sha256_hex(hashed.dump());
}

Experiment::~Experiment() = default;

void Experiment::note(std::string msg) {
  if (logger_) logger_(msg);
}

const Tokenizer& Experiment::tokenizer() {
  if (!tokenizer_) {
    tokenizer_ = std::make_unique<Tokenizer>(
        Tokenizer::load(config_.model.vocab, config_.model.merges, config_.model.added_tokens));
  }
  return *tokenizer_;
}

const Model& Experiment::model() {
  if (!model_) {
    note("loading model " + config_.model.id);
    model_ = std::make_unique<Model>(load_model(config_.model.config, config_.model.weights));
    if (tokenizer().vocab_size() > model_->config().vocab_size) {
      throw_error(ErrorKind::Config, fmt::format("tokenizer vocabulary ({}) exceeds model vocabulary ({})",
                                                 tokenizer().vocab_size(), model_->config().vocab_size));
    }
  }
  return *model_;
}

std::string Experiment::model_fingerprint() {
  if (!fingerprint_) {
    std::string material = config_.model.id + "\n" + sha256_file(config_.model.config) + "\n";
    const fs::path& w = config_.model.weights;
    if (fs::is_directory(w)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(w)) {
        const std::string name = e.path().filename().string();
        if (name.ends_with(".safetensors") || name.ends_with(".safetensors.index.json")) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) material += fmt::format("{} {}\n", f.filename().string(), fs::file_size(f));
    } else {
      material += fmt::format("{} {}\n", w.filename().string(), fs::file_size(w));
    }
    fingerprint_ = sha256_hex(material);
  }
  return *fingerprint_;
}

void Experiment::generate_datasets() {
  for (const auto& spec : config_.datasets) {
    const fs::path path = out(fs::path("data") / (spec.name + ".jsonl"));
    if (fs::exists(path)) {
      try {
        Dataset d = read_dataset(path);
        if (d.spec.to_json() == spec.to_json() && d.vocab_hash == tokenizer().vocab_hash() &&
            d.queries.size() == spec.count) {
          note("data/" + spec.name + ".jsonl: reused");
          datasets_[spec.name] = std::move(d);
          continue;
        }
      } catch (const Error&) {
        // Unreadable cache; regenerate below.
      }
    }
    Dataset d;
    try {
      d = generate(spec, tokenizer());
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Runtime && e.kind() != ErrorKind::Input) throw;
      throw StageError("gen-data", "", e.what());
    }
    write_file_atomic(path, to_jsonl(d));
    note("data/" + spec.name + ".jsonl: generated " + std::to_string(d.queries.size()) + " queries");
    datasets_[spec.name] = std::move(d);
  }
}

const Dataset& Experiment::dataset(const std::string& name) {
  if (!datasets_.count(name)) generate_datasets();
  return datasets_.at(name);
}

void Experiment::run_lens() {
  for (const auto& spec : config_.datasets) lens(spec.name);
}

const std::vector<LensRecord>& Experiment::lens(const std::string& name) {
  if (auto it = lens_.find(name); it != lens_.end()) return it->second;
  const Dataset& ds = dataset(name);
  const fs::path data_path = out(fs::path("data") / (name + ".jsonl"));
  const fs::path path = out(fs::path("lens") / (name + ".jsonl"));
  const json header = {{"model_id", config_.model.id},
                       {"model_fingerprint", model_fingerprint()},
                       {"dataset_sha256", sha256_file(data_path)},
                       {"k", config_.k},
                       {"extra_targets", config_.extra_targets},
                       {"keep_distributions", config_.keep_distributions}};
  if (fs::exists(path)) {
    try {
      json h;
      auto records = lens_records_from_jsonl(read_file(path), &h);
      h.erase("schema");
      h.erase("records");
      bool ok = h == header && records.size() == ds.queries.size();
      for (std::size_t i = 0; ok && i < records.size(); ++i) ok = records[i].query_id == ds.queries[i].id;
      if (ok) {
        note("lens/" + name + ".jsonl: reused");
        return lens_[name] = std::move(records);
      }
    } catch (const Error&) {
      // Unreadable cache; recompute below.
    }
  }
  LensOptions opts;
  opts.k = config_.k;
  opts.extra_targets = config_.extra_targets;
  opts.keep_distributions = config_.keep_distributions;
  const Model& m = model();
  auto records = lens_sweep_dataset(m, tokenizer(), ds, opts, config_.workers);
  write_file_atomic(path, to_jsonl(records, header));
  note("lens/" + name + ".jsonl: computed " + std::to_string(records.size()) + " records");
  return lens_[name] = std::move(records);
}

void Experiment::compute_metrics() {
  for (const auto& spec : config_.datasets) {
    const auto& recs = lens(spec.name);
    const fs::path dir = fs::path("metrics") / spec.name;
    try {
      std::string csv = kStatsHeader;
      series_rows(csv, "", numerical_mass_series(recs, SiteKind::PostAttention),
                  numerical_mass_series(recs, SiteKind::PostMlp));
      write_file_atomic(out(dir / "numerical_mass.csv"), csv);

      csv = std::string("k,") + kStatsHeader;
      for (std::size_t k : config_.metric_k) {
        series_rows(csv, fmt::format("{},", k), topk_numerical_proportion(recs, SiteKind::PostAttention, k),
                    topk_numerical_proportion(recs, SiteKind::PostMlp, k));
      }
      write_file_atomic(out(dir / "topk_numerical_proportion.csv"), csv);

      csv = std::string("k,") + kStatsHeader;
      for (std::size_t k : config_.metric_k) {
        series_rows(csv, fmt::format("{},", k), absolute_error_series(recs, SiteKind::PostAttention, k),
                    absolute_error_series(recs, SiteKind::PostMlp, k));
      }
      write_file_atomic(out(dir / "absolute_error.csv"), csv);

      csv = std::string("statistic,") + kStatsHeader;
      auto [rank_att, prob_att] = target_trajectory(recs, SiteKind::PostAttention);
      auto [rank_mlp, prob_mlp] = target_trajectory(recs, SiteKind::PostMlp);
      series_rows(csv, "rank,", rank_att, rank_mlp);
      series_rows(csv, "probability,", prob_att, prob_mlp);
      write_file_atomic(out(dir / "gold_trajectory.csv"), csv);

      csv = std::string("operand,") + kStatsHeader;
      const std::size_t n_ops = recs.front().operand_tokens.size();
      for (std::size_t i = 0; i < n_ops; ++i) {
        const auto t = static_cast<TargetKind>(i + 1);
        series_rows(csv, fmt::format("{},", i + 1), rank1_share_series(recs, SiteKind::PostAttention, t),
                    rank1_share_series(recs, SiteKind::PostMlp, t));
      }
      write_file_atomic(out(dir / "operand_rank1_share.csv"), csv);

      csv = "layer,site,token_id,token,mean_probability,frequency_share\n";
      for (SiteKind s : {SiteKind::PostAttention, SiteKind::PostMlp}) {
        for (const auto& e : frequent_token_table(recs, s)) {
          csv += fmt::format("{},{},{},{},{},{}\n", e.layer, site_name(s), e.token,
                             csv_text(unquote(printable(e.text))), num(e.mean_probability), num(e.frequency_share));
        }
      }
      write_file_atomic(out(dir / "frequent_tokens.csv"), csv);
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError("metrics", "", fmt::format("dataset {}: {}", spec.name, e.what()));
    }
    note("metrics/" + spec.name + ": 6 CSV files");
  }
}

void Experiment::run_interventions() {
  for (const auto& plan : config_.interventions) {
    const Dataset& ds = dataset(plan.dataset);
    const std::string stem = intervention_stem(plan);
    const fs::path dump = out(fs::path("interventions") / (stem + ".jsonl"));
    const fs::path means = out(fs::path("interventions") / (stem + "_means.csv"));
    const json header_base = {{"model_id", config_.model.id},
                              {"model_fingerprint", model_fingerprint()},
                              {"dataset_sha256", sha256_file(out(fs::path("data") / (plan.dataset + ".jsonl")))},
                              {"field", field_name(plan.field)},
                              {"seed", plan.seed},
                              {"requested_pairs", plan.pairs}};
    if (fs::exists(dump) && fs::exists(means)) {
      try {
        std::istringstream in(read_file(dump));
        std::string line;
        std::getline(in, line);
        json h = json::parse(line);
        bool ok = true;
        for (auto it = header_base.begin(); it != header_base.end(); ++it) ok = ok && h.value(it.key(), json()) == *it;
        if (ok && (plan.layers.empty() || h.value("layers", json()) == json(plan.layers))) {
          note("interventions/" + stem + ": reused");
          continue;
        }
      } catch (const std::exception&) {
        // Unreadable cache; recompute below.
      }
    }
    PairSet set = derive_pairs(ds, plan.field, plan.seed, tokenizer(), plan.pairs);
    if (set.pairs.empty()) {
      throw StageError("intervene", "", fmt::format("no valid {} pairs in dataset {}", field_name(plan.field),
                                                    plan.dataset));
    }
    const SweepResult r = sweep_layers(model(), tokenizer(), set.pairs, plan.layers, config_.workers);
    json header = header_base;
    json skipped = json::array();
    for (const auto& s : set.skipped) skipped.push_back({{"base_id", s.base_id}, {"reason", s.reason}});
    header["skipped"] = skipped;
    write_file_atomic(dump, sweep_to_jsonl(r, set.pairs, header));
    write_file_atomic(means, sweep_means_csv(r));
    note(fmt::format("interventions/{}: {} pairs, {} skipped", stem, set.pairs.size(), set.skipped.size()));
  }
}

void Experiment::write_report() {
  json summary = {{"schema", kSummarySchema}, {"model_id", config_.model.id}, {"tool_version", NUMLENS_VERSION}};
  json datasets = json::object();
  for (const auto& spec : config_.datasets) {
    const auto& recs = lens(spec.name);
    json d;
    const AccuracyResult acc = record_accuracy(recs);
    d["queries"] = recs.size();
    d["accuracy"] = {{"correct", acc.correct}, {"total", acc.total}, {"ratio", acc.ratio()}};

    const LayerSeries mass_att = numerical_mass_series(recs, SiteKind::PostAttention);
    const LayerSeries mass_mlp = numerical_mass_series(recs, SiteKind::PostMlp);
    const auto corr = pearson(mass_att, mass_mlp);
    d["numerical_mass_correlation"] = opt(corr);

    const PropagationStats prop = operand_propagation_stats(recs);
    json ops = json::array();
    for (const auto& o : prop.operands) ops.push_back({{"share", o.share}, {"mean_first_layer", opt(o.mean_first_layer)}});
    d["propagation"] = {{"operands", ops},
                        {"both_share", prop.both_share},
                        {"mutual_exclusivity_share", prop.mutual_exclusivity_share}};

    if (spec.n_operands == 3) {
      const SufficiencyStats suf = operand_sufficiency(recs);
      d["sufficiency"] = {{"insufficient", suf.insufficient},
                          {"insufficient_share", suf.insufficient_share},
                          {"operator_shares", suf.operator_shares},
                          {"operator_pair_propagated", suf.operator_pair_propagated}};
    } else {
      d["sufficiency"] = nullptr;
    }
    d["frequent_tokens"] = {{"post_att", frequent_json(frequent_token_table(recs, SiteKind::PostAttention))},
                            {"post_mlp", frequent_json(frequent_token_table(recs, SiteKind::PostMlp))}};

    // Soft gates: a failed gate flags the report but is not an error.
    const double op1 = prop.operands.empty() ? 0.0 : prop.operands[0].share;
    const bool corr_ok = corr && *corr > 0.6;
    const bool op1_ok = op1 >= 0.2;
    d["soft_gates"] = json::array({
        {{"name", "numerical_mass_correlation"}, {"value", opt(corr)}, {"threshold", 0.6}, {"passed", corr_ok}},
        {{"name", "operand1_propagation_share"}, {"value", op1}, {"threshold", 0.2}, {"passed", op1_ok}},
    });
    d["flagged"] = !(corr_ok && op1_ok);
    datasets[spec.name] = d;

    if (config_.svg) {
      const auto means = [](const LayerSeries& s) {
        std::vector<std::optional<double>> v;
        for (const auto& p : s.values) v.push_back(p ? std::optional<double>(p->mean) : std::nullopt);
        return v;
      };
      const auto medians = [](const LayerSeries& s) {
        std::vector<std::optional<double>> v;
        for (const auto& p : s.values) v.push_back(p ? std::optional<double>(p->median) : std::nullopt);
        return v;
      };
      write_file_atomic(out(fs::path("svg") / (spec.name + "_numerical_mass.svg")),
                        svg::line_chart(spec.name + ": numerical probability mass", "layer", "mean mass",
                                        {{"post-ATT", means(mass_att)}, {"post-MLP", means(mass_mlp)}}));
      const auto [rank_att, prob_att] = target_trajectory(recs, SiteKind::PostAttention);
      const auto [rank_mlp, prob_mlp] = target_trajectory(recs, SiteKind::PostMlp);
      write_file_atomic(out(fs::path("svg") / (spec.name + "_gold_rank.svg")),
                        svg::line_chart(spec.name + ": rank of the correct result", "layer", "median rank",
                                        {{"post-ATT", medians(rank_att)}, {"post-MLP", medians(rank_mlp)}}));
    }
  }
  summary["datasets"] = datasets;

  json interventions = json::array();
  for (const auto& plan : config_.interventions) {
    const std::string stem = intervention_stem(plan);
    const fs::path dump = out(fs::path("interventions") / (stem + ".jsonl"));
    if (!fs::exists(dump)) continue;
    std::istringstream in(read_file(dump));
    std::string line;
    std::getline(in, line);
    const json h = json::parse(line);
    interventions.push_back({{"dataset", plan.dataset},
                             {"field", field_name(plan.field)},
                             {"pairs", h.value("pairs", 0)},
                             {"skipped", h.value("skipped", json::array()).size()},
                             {"dump", "interventions/" + stem + ".jsonl"},
                             {"means", "interventions/" + stem + "_means.csv"}});
    if (config_.svg) {
      std::vector<std::optional<double>> base, source;
      std::istringstream csv(read_file(out(fs::path("interventions") / (stem + "_means.csv"))));
      std::getline(csv, line);
      while (std::getline(csv, line)) {
        std::vector<std::string> f;
        std::istringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() == 4) {
          base.push_back(std::stod(f[2]));
          source.push_back(std::stod(f[3]));
        }
      }
      write_file_atomic(out(fs::path("svg") / (stem + "_interventions.svg")),
                        svg::line_chart(stem + ": attention-output interchange", "swept layer index",
                                        "mean probability change",
                                        {{"base result", base}, {"source result", source}}));
    }
  }
  summary["interventions"] = interventions;
  write_file_atomic(out("summary.json"), summary.dump(2) + "\n");
  note("summary.json written");
}

void Experiment::write_manifest() {
  json files = json::array();
  std::vector<std::string> rel;
  if (fs::exists(config_.output_dir)) {
    for (const auto& e : fs::recursive_directory_iterator(config_.output_dir)) {
      if (!e.is_regular_file()) continue;
      const std::string r = fs::relative(e.path(), config_.output_dir).generic_string();
      if (r == "manifest.json" || r.ends_with(".tmp")) continue;
      rel.push_back(r);
    }
  }
  std::sort(rel.begin(), rel.end());
  for (const auto& r : rel) {
    const fs::path p = config_.output_dir / r;
    files.push_back({{"path", r}, {"bytes", fs::file_size(p)}, {"sha256", sha256_file(p)}});
  }
  json datasets = json::object();
  for (const auto& spec : config_.datasets) {
    const fs::path p = out(fs::path("data") / (spec.name + ".jsonl"));
    if (fs::exists(p)) datasets[spec.name] = sha256_file(p);
  }
  const json manifest = {{"schema", kManifestSchema},
                         {"tool", "numlens"},
                         {"tool_version", NUMLENS_VERSION},
                         {"config_sha256", config_hash_},
                         {"model_id", config_.model.id},
                         {"model_fingerprint", model_fingerprint()},
                         {"datasets", datasets},
                         {"schemas",
                          {{"dataset", kDatasetSchema},
                           {"lens", kLensSchema},
                           {"interventions", kInterventionSchema},
                           {"metrics_csv", kMetricsCsvSchema},
                           {"summary", kSummarySchema}}},
                         {"files", files}};
  write_file_atomic(out("manifest.json"), manifest.dump(2) + "\n");
}

void Experiment::run_all() {
  generate_datasets();
  run_lens();
  compute_metrics();
  run_interventions();
  write_report();
  write_manifest();
}

}  // namespace numlens
