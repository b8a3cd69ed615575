// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "numlens/dataset.hpp"
#include "numlens/model.hpp"
#include "numlens/tokenizer.hpp"

namespace numlens {

enum class InterventionField { Operand1, Operand2, Operator };

std::string_view field_name(InterventionField f);  // "operand1" | "operand2" | "operator"
InterventionField parse_field(std::string_view s);

struct InterventionPair {
  std::string id;
  ArithmeticQuery base;
  ArithmeticQuery source;
  InterventionField field = InterventionField::Operand2;
};

struct DeriveResult {
  std::optional<InterventionPair> pair;
  std::string skip_reason;  // set when pair is empty
};

/// Source query differing from a 2-operand base in exactly `field`. Operators
/// flip + <-> -; operand replacements are drawn uniformly from the values that
/// keep every dataset bound, single-token check and the prompt's token length.
/// The draw is a pure function of (seed, base.id).
DeriveResult derive_source(const ArithmeticQuery& base, InterventionField field, std::uint64_t seed,
                           const Tokenizer& tokenizer, std::int64_t bound);

struct SkippedPair {
  std::string base_id;
  std::string reason;
};

struct PairSet {
  std::vector<InterventionPair> pairs;
  std::vector<SkippedPair> skipped;
};

/// derive_source over the first queries of a dataset until max_pairs pairs exist
/// (0 = all queries).
PairSet derive_pairs(const Dataset& dataset, InterventionField field, std::uint64_t seed,
                     const Tokenizer& tokenizer, std::size_t max_pairs = 0);

struct InterventionOutcome {
  std::size_t layer = 0;
  double delta_base_prob = 0.0;    // patched minus unpatched probability of the base gold token
  double delta_source_prob = 0.0;  // same for the source gold token
};

/// Patches the source's attention output at (layer, last token) into the base run.
/// Errors: prompts of different token length; layer out of range (Input).
InterventionOutcome run_interchange(const Model& model, const Tokenizer& tokenizer, const InterventionPair& pair,
                                    std::size_t layer);

struct PairSweep {
  std::string pair_id;
  std::vector<InterventionOutcome> outcomes;  // one per swept layer
};

struct SweepResult {
  std::vector<std::size_t> layers;
  std::vector<PairSweep> per_pair;            // pair-id order
  std::vector<InterventionOutcome> means;     // one per swept layer
};

/// Runs every (pair, layer) cell; base and source are each evaluated once per
/// pair. Taps below each patched layer are checked against the unpatched run.
/// layers empty = all layers. Errors: empty pair set (Input).
SweepResult sweep_layers(const Model& model, const Tokenizer& tokenizer, const std::vector<InterventionPair>& pairs,
                         std::vector<std::size_t> layers = {}, std::size_t workers = 0);

inline constexpr const char* kInterventionSchema = "numlens.interventions/1";

/// Per-pair dump: header line, then one line per (pair, layer).
std::string sweep_to_jsonl(const SweepResult& r, const std::vector<InterventionPair>& pairs,
                          const nlohmann::json& header = nlohmann::json::object());
/// layer,n_pairs,mean_delta_base_prob,mean_delta_source_prob
std::string sweep_means_csv(const SweepResult& r);

}  // namespace numlens
