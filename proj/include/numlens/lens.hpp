// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "numlens/dataset.hpp"
#include "numlens/model.hpp"
#include "numlens/runtime.hpp"
#include "numlens/tokenizer.hpp"

namespace numlens {

/// Next-token probabilities over the full model vocabulary.
struct Distribution {
  std::vector<double> probabilities;
};

/// Max-shifted softmax accumulated in double.
Distribution softmax(std::span<const float> logits);

/// softmax(lm_head(final_norm(v))). Errors: non-finite input, wrong length (Input).
Distribution de_embed(std::span<const float> v, const Model& model, const kernels::KernelSet* kernels = nullptr);

struct RankProb {
  std::size_t rank = 0;  // 1-based
  double probability = 0.0;
  bool operator==(const RankProb&) const = default;
};

/// rank = 1 + #{j : p_j > p_t} + #{j < t : p_j == p_t}.
RankProb rank_and_prob(const Distribution& d, TokenId token);

/// The k most likely ids, descending probability, ascending id among ties.
std::vector<TokenId> top_k_ids(const Distribution& d, std::size_t k);

/// Numerical-token rule applied to a decoded string: strip at most one leading
/// space; the rest must be non-empty ASCII digits. Returns the value.
std::optional<double> numerical_text_value(std::string_view text);

struct TopEntry {
  TokenId id = 0;
  std::string text;
  double probability = 0.0;
};

struct IntermediatePrediction {
  TapSite site;
  std::vector<TopEntry> topk;
  std::map<TokenId, RankProb> targets;
  std::optional<double> numerical_mass;       // absent without a tokenizer
  std::optional<Distribution> distribution;   // only when requested
};

struct LensRecord {
  std::string query_id;
  std::vector<std::int64_t> operands;
  std::vector<Op> operators;
  std::int64_t gold_result = 0;
  TokenId gold_token = -1;
  std::vector<TokenId> operand_tokens;
  std::vector<TokenId> operator_tokens;
  std::vector<TokenId> prompt_tokens;
  std::size_t n_layers = 0;
  std::vector<IntermediatePrediction> sites;  // all_sites(n_layers) order
  IntermediatePrediction final_prediction;    // from the model's own logits

  const IntermediatePrediction& at(TapSite s) const;
};

struct LensOptions {
  std::size_t k = 10;
  std::vector<TokenId> extra_targets;
  bool query_targets = true;        // gold, operand and operator tokens
  bool keep_distributions = false;  // retain (and serialize) full distributions
};

/// De-embeds every tap of one forward pass. tokenizer may be null (no text, no
/// numerical mass); ids beyond the tokenizer's vocabulary count as non-numerical.
std::vector<IntermediatePrediction> predict_sites(const Model& model, const TapRecord& taps,
                                                  const std::vector<TokenId>& targets, std::size_t k,
                                                  const Tokenizer* tokenizer, bool keep_distributions,
                                                  IntermediatePrediction* final_prediction = nullptr);

/// One forward pass on the query's prompt with every site de-embedded.
LensRecord lens_sweep(const Model& model, const Tokenizer& tokenizer, const ArithmeticQuery& query,
                      const LensOptions& options = {});

/// lens_sweep over a dataset on a worker pool; results keep dataset order.
/// Failures are rethrown as StageError("lens", query id).
std::vector<LensRecord> lens_sweep_dataset(const Model& model, const Tokenizer& tokenizer, const Dataset& dataset,
                                           const LensOptions& options = {}, std::size_t workers = 0);

inline constexpr const char* kLensSchema = "numlens.lens/1";

nlohmann::json to_json(const LensRecord& r);
LensRecord lens_record_from_json(const nlohmann::json& j);
/// One record per line; invalid UTF-8 in token text is replaced with U+FFFD.
/// `header` fields are merged into the header line.
std::string to_jsonl(const std::vector<LensRecord>& records, const nlohmann::json& header = nlohmann::json::object());
std::vector<LensRecord> lens_records_from_jsonl(const std::string& text, nlohmann::json* header = nullptr);

}  // namespace numlens
