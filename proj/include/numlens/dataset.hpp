// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "numlens/error.hpp"
#include "numlens/model.hpp"
#include "numlens/tokenizer.hpp"

namespace numlens {

enum class Op : char { Add = '+', Sub = '-' };

enum class SizeClass { Small, Large };

struct DatasetSpec {
  std::string name;  // defaults to e.g. "add_small", "add_sub_large"
  std::vector<Op> operators;
  SizeClass size_class = SizeClass::Large;
  std::size_t n_operands = 2;
  std::size_t count = 500;
  std::uint64_t seed = 0;

  /// Inclusive bound for operands and result: 99 (small) or 520 (large).
  std::int64_t bound() const { return size_class == SizeClass::Small ? 99 : 520; }
  std::string default_name() const;
  /// Throws Error(Config) on an unsupported operator tuple or arity mismatch.
  void validate() const;

  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

struct ArithmeticQuery {
  std::string id;
  std::vector<std::int64_t> operands;
  std::vector<Op> operators;
  std::string prompt;
  std::int64_t gold_result = 0;
  TokenId gold_token = -1;
};

struct Dataset {
  DatasetSpec spec;
  std::string vocab_hash;
  std::vector<ArithmeticQuery> queries;
};

/// Left-to-right evaluation.
std::int64_t evaluate(const std::vector<std::int64_t>& operands, const std::vector<Op>& operators);

/// "Please calculate a + b [- c] =".
std::string render_prompt(const std::vector<std::int64_t>& operands, const std::vector<Op>& operators);
inline std::string render_prompt(const ArithmeticQuery& q) { return render_prompt(q.operands, q.operators); }

/// Builds a fully populated query (prompt, gold result and token). Returns
/// nullopt if any operand or the result is outside [0, bound] or lacks a
/// single space-prefixed token.
std::optional<ArithmeticQuery> make_query(std::vector<std::int64_t> operands, std::vector<Op> operators,
                                          std::int64_t bound, const Tokenizer& tokenizer);

/// Number of distinct valid operand tuples for the spec.
std::uint64_t valid_space_size(const DatasetSpec& spec, const Tokenizer& tokenizer);

/// Uniform sample without replacement over the valid tuple space.
/// Errors (Config): unsupported operators, or count above the valid space.
Dataset generate(const DatasetSpec& spec, const Tokenizer& tokenizer);

/// Independent recheck of one query; returns the violated properties (empty if valid).
std::vector<std::string> revalidate(const ArithmeticQuery& q, const DatasetSpec& spec, const Tokenizer& tokenizer);

/// Header line then one query per line.
std::string to_jsonl(const Dataset& d);
Dataset from_jsonl(const std::string& text);
void write_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

inline constexpr const char* kDatasetSchema = "numlens.dataset/1";

struct AccuracyResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  double ratio() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// Argmax (lowest id on ties) of the final next-token logits against gold_token.
/// Errors: tokenizer vocabulary larger than the model's (Input).
AccuracyResult evaluate_accuracy(const Model& model, const Tokenizer& tokenizer, const Dataset& dataset,
                                 std::size_t workers = 0);

/// Index of the largest value, lowest index on ties.
std::size_t argmax(const std::vector<float>& v);

}  // namespace numlens
