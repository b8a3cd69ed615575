// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "numlens/lens.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>

#include <fmt/format.h>

#include "numlens/parallel.hpp"

namespace numlens {
using nlohmann::json;

Distribution softmax(std::span<const float> logits) {
  Distribution d;
  d.probabilities.resize(logits.size());
  if (logits.empty()) return d;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d.probabilities[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += d.probabilities[i];
  }
  for (double& p : d.probabilities) p /= sum;
  return d;
}

Distribution de_embed(std::span<const float> v, const Model& model, const kernels::KernelSet* kernels) {
  for (float x : v) {
    if (!std::isfinite(x)) throw_error(ErrorKind::Input, "de_embed input is not finite");
  }
  return softmax(project_to_vocab(model, v, kernels));
}

RankProb rank_and_prob(const Distribution& d, TokenId token) {
  const auto& p = d.probabilities;
  if (token < 0 || static_cast<std::size_t>(token) >= p.size()) {
    throw_error(ErrorKind::Input, fmt::format("token id {} out of range [0, {})", token, p.size()));
  }
  const std::size_t t = static_cast<std::size_t>(token);
  const double pt = p[t];
  std::size_t above = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > pt || (p[j] == pt && j < t)) ++above;
  }
  return {above + 1, pt};
}

std::vector<TokenId> top_k_ids(const Distribution& d, std::size_t k) {
  const auto& p = d.probabilities;
  k = std::min(k, p.size());
  std::vector<TokenId> ids(p.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>(i);
  auto before = [&](TokenId a, TokenId b) { return p[a] > p[b] || (p[a] == p[b] && a < b); };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), before);
  ids.resize(k);
  return ids;
}

std::optional<double> numerical_text_value(std::string_view s) {
  if (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10.0 + (c - '0');
  }
  return v;
}

const IntermediatePrediction& LensRecord::at(TapSite s) const {
  if (s.layer < 1 || s.layer > n_layers) throw_error(ErrorKind::Input, fmt::format("no site at layer {}", s.layer));
  return sites[2 * (s.layer - 1) + (s.site == SiteKind::PostMlp ? 1 : 0)];
}

namespace {

IntermediatePrediction summarize(const Distribution& d, TapSite site, const std::vector<TokenId>& targets,
                                 std::size_t k, const Tokenizer* tok, bool keep) {
  IntermediatePrediction ip;
  ip.site = site;
  for (TokenId id : top_k_ids(d, k)) {
    TopEntry e;
    e.id = id;
    e.probability = d.probabilities[id];
    if (tok && static_cast<std::size_t>(id) < tok->vocab_size()) e.text = tok->token_bytes(id);
    ip.topk.push_back(std::move(e));
  }
  for (TokenId t : targets) ip.targets[t] = rank_and_prob(d, t);
  if (tok) {
    double mass = 0.0;
    const std::size_t n = std::min(tok->vocab_size(), d.probabilities.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (tok->is_numerical(static_cast<TokenId>(i))) mass += d.probabilities[i];
    }
    ip.numerical_mass = mass;
  }
  if (keep) ip.distribution = d;
  return ip;
}

}  // namespace

std::vector<IntermediatePrediction> predict_sites(const Model& model, const TapRecord& taps,
                                                  const std::vector<TokenId>& targets, std::size_t k,
                                                  const Tokenizer* tokenizer, bool keep_distributions,
                                                  IntermediatePrediction* final_prediction) {
  if (k == 0) throw_error(ErrorKind::Input, "lens k must be >= 1");
  std::vector<IntermediatePrediction> out;
  for (TapSite s : all_sites(taps.n_layers())) {
    out.push_back(summarize(de_embed(taps.tap(s), model), s, targets, k, tokenizer, keep_distributions));
  }
  if (final_prediction) {
    *final_prediction = summarize(softmax(taps.final_logits), {taps.n_layers(), SiteKind::PostMlp}, targets, k,
                                  tokenizer, keep_distributions);
  }
  return out;
}

LensRecord lens_sweep(const Model& model, const Tokenizer& tokenizer, const ArithmeticQuery& query,
                      const LensOptions& options) {
  LensRecord r;
  r.query_id = query.id;
  r.operands = query.operands;
  r.operators = query.operators;
  r.gold_result = query.gold_result;
  r.gold_token = query.gold_token;
  for (auto v : query.operands) {
    auto id = tokenizer.integer_token(v, true);
    r.operand_tokens.push_back(id ? *id : -1);
  }
  for (Op op : query.operators) {
    auto id = tokenizer.find_token(op == Op::Add ? " +" : " -");
    r.operator_tokens.push_back(id ? *id : -1);
  }
  r.prompt_tokens = tokenizer.encode(query.prompt);
  if (r.prompt_tokens.empty()) throw_error(ErrorKind::Input, "prompt encodes to no tokens");

  std::vector<TokenId> targets = options.extra_targets;
  if (options.query_targets) {
    targets.push_back(r.gold_token);
    for (TokenId t : r.operand_tokens) targets.push_back(t);
    for (TokenId t : r.operator_tokens) targets.push_back(t);
  }
  std::erase_if(targets, [](TokenId t) { return t < 0; });
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

  const TapRecord taps = forward_with_taps(model, r.prompt_tokens, r.prompt_tokens.size() - 1);
  r.n_layers = taps.n_layers();
  r.sites = predict_sites(model, taps, targets, options.k, &tokenizer, options.keep_distributions,
                          &r.final_prediction);
  return r;
}

std::vector<LensRecord> lens_sweep_dataset(const Model& model, const Tokenizer& tokenizer, const Dataset& dataset,
                                           const LensOptions& options, std::size_t workers) {
  std::vector<LensRecord> out(dataset.queries.size());
  parallel_for(out.size(), workers, [&](std::size_t i) {
    const auto& q = dataset.queries[i];
    try {
      out[i] = lens_sweep(model, tokenizer, q, options);
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError("lens", q.id, e.what());
    }
  });
  return out;
}

namespace {

json prediction_json(const IntermediatePrediction& ip) {
  json topk = json::array();
  for (const auto& e : ip.topk) topk.push_back(json::array({e.id, e.text, e.probability}));
  json targets = json::object();
  for (const auto& [id, rp] : ip.targets) targets[std::to_string(id)] = json::array({rp.rank, rp.probability});
  json j = {{"layer", ip.site.layer}, {"site", site_name(ip.site.site)}, {"topk", topk}, {"targets", targets}};
  j["numerical_mass"] = ip.numerical_mass ? json(*ip.numerical_mass) : json(nullptr);
  if (ip.distribution) j["distribution"] = ip.distribution->probabilities;
  return j;
}

IntermediatePrediction prediction_from_json(const json& j) {
  IntermediatePrediction ip;
  ip.site = {j.at("layer").get<std::size_t>(), parse_site(j.at("site").get<std::string>())};
  for (const auto& e : j.at("topk")) ip.topk.push_back({e.at(0).get<TokenId>(), e.at(1).get<std::string>(), e.at(2).get<double>()});
  for (auto it = j.at("targets").begin(); it != j.at("targets").end(); ++it) {
    ip.targets[std::stoi(it.key())] = {it.value().at(0).get<std::size_t>(), it.value().at(1).get<double>()};
  }
  if (j.contains("numerical_mass") && !j["numerical_mass"].is_null()) ip.numerical_mass = j["numerical_mass"].get<double>();
  if (j.contains("distribution")) ip.distribution = Distribution{j["distribution"].get<std::vector<double>>()};
  return ip;
}

}  // namespace

json to_json(const LensRecord& r) {
  json ops = json::array();
  for (Op op : r.operators) ops.push_back(std::string(1, static_cast<char>(op)));
  json sites = json::array();
  for (const auto& s : r.sites) sites.push_back(prediction_json(s));
  return {{"query_id", r.query_id},
          {"operands", r.operands},
          {"operators", ops},
          {"gold_result", r.gold_result},
          {"gold_token_id", r.gold_token},
          {"operand_token_ids", r.operand_tokens},
          {"operator_token_ids", r.operator_tokens},
          {"prompt_tokens", r.prompt_tokens},
          {"n_layers", r.n_layers},
          {"sites", sites},
          {"final", prediction_json(r.final_prediction)}};
}

LensRecord lens_record_from_json(const json& j) {
  LensRecord r;
  try {
    r.query_id = j.at("query_id").get<std::string>();
    r.operands = j.at("operands").get<std::vector<std::int64_t>>();
    for (const auto& o : j.at("operators")) r.operators.push_back(o.get<std::string>() == "+" ? Op::Add : Op::Sub);
    r.gold_result = j.at("gold_result").get<std::int64_t>();
    r.gold_token = j.at("gold_token_id").get<TokenId>();
    r.operand_tokens = j.at("operand_token_ids").get<std::vector<TokenId>>();
    r.operator_tokens = j.at("operator_token_ids").get<std::vector<TokenId>>();
    r.prompt_tokens = j.at("prompt_tokens").get<std::vector<TokenId>>();
    r.n_layers = j.at("n_layers").get<std::size_t>();
    for (const auto& s : j.at("sites")) r.sites.push_back(prediction_from_json(s));
    r.final_prediction = prediction_from_json(j.at("final"));
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Config, std::string("malformed lens record: ") + e.what());
  }
  if (r.sites.size() != 2 * r.n_layers) throw_error(ErrorKind::Config, "lens record does not cover every site");
  return r;
}

std::string to_jsonl(const std::vector<LensRecord>& records, const json& header) {
  json h = header;
  h["schema"] = kLensSchema;
  h["records"] = records.size();
  std::string out = h.dump() + '\n';
  for (const auto& r : records) {
    out += to_json(r).dump(-1, ' ', false, json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

std::vector<LensRecord> lens_records_from_jsonl(const std::string& text, json* header) {
  std::istringstream in(text);
  std::string line;
  std::vector<LensRecord> out;
  try {
    if (!std::getline(in, line)) throw_error(ErrorKind::Config, "lens file is empty");
    json h = json::parse(line);
    if (h.value("schema", "") != kLensSchema) throw_error(ErrorKind::Config, "lens file lacks a numlens.lens/1 header");
    if (header) *header = std::move(h);
    while (std::getline(in, line)) {
      if (!line.empty()) out.push_back(lens_record_from_json(json::parse(line)));
    }
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Config, std::string("malformed lens JSONL: ") + e.what());
  }
  return out;
}

}  // namespace numlens
