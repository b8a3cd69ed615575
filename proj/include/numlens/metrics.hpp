// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "numlens/dataset.hpp"
#include "numlens/lens.hpp"

namespace numlens {

/// Summary of one layer's per-query values. Quartiles use linear interpolation
/// between order statistics.
struct SeriesPoint {
  std::size_t n = 0;
  double mean = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

struct LayerSeries {
  SiteKind site = SiteKind::PostMlp;
  std::string statistic;
  std::vector<std::optional<SeriesPoint>> values;  // index layer - 1; nullopt = no qualifying samples
};

SeriesPoint summarize_values(std::vector<double> v);

/// Per layer, mean over queries of the numerical-token probability mass.
LayerSeries numerical_mass_series(const std::vector<LensRecord>& records, SiteKind site);

/// Per layer, mean over queries of (numerical tokens among the top k) / k.
LayerSeries topk_numerical_proportion(const std::vector<LensRecord>& records, SiteKind site, std::size_t k);

/// Per query and layer, mean |value - gold| over numerical tokens in the top k;
/// queries without a numerical token in the top k do not contribute.
LayerSeries absolute_error_series(const std::vector<LensRecord>& records, SiteKind site, std::size_t k);

enum class TargetKind { Gold, Operand1, Operand2, Operand3 };
std::string_view target_name(TargetKind t);

/// (rank series, probability series) of one designated target.
std::pair<LayerSeries, LayerSeries> target_trajectory(const std::vector<LensRecord>& records, SiteKind site,
                                                      TargetKind target = TargetKind::Gold);

/// Per layer, share of queries where the target is rank 1 (mean of 0/1 indicators).
LayerSeries rank1_share_series(const std::vector<LensRecord>& records, SiteKind site, TargetKind target);

struct OperandPropagation {
  double share = 0.0;                       // queries where the operand is rank 1 at some post-ATT site
  std::optional<double> mean_first_layer;   // mean of the first such layer
};

struct PropagationStats {
  std::size_t n_queries = 0;
  std::vector<OperandPropagation> operands;
  double both_share = 0.0;                  // operands 1 and 2 both propagate
  double mutual_exclusivity_share = 0.0;    // exactly one operand propagates
};

PropagationStats operand_propagation_stats(const std::vector<LensRecord>& records);

struct FrequentTokenEntry {
  std::size_t layer = 0;
  SiteKind site = SiteKind::PostAttention;
  TokenId token = 0;
  std::string text;
  double mean_probability = 0.0;  // over the queries where it is top 1
  double frequency_share = 0.0;   // share of queries where it is top 1
};

/// Tokens that are top 1 in more than 80% of queries at a layer with mean
/// probability above 0.5, sorted by layer then token id.
std::vector<FrequentTokenEntry> frequent_token_table(const std::vector<LensRecord>& records, SiteKind site);

struct SufficiencyStats {
  std::size_t n_queries = 0;
  std::size_t insufficient = 0;
  double insufficient_share = 0.0;           // fewer than 2 operands ever rank 1 post-ATT
  std::vector<double> operator_shares;       // per operator position: share with rank 1 post-ATT
  bool operator_pair_propagated = false;     // every operator share above one half
};

SufficiencyStats operand_sufficiency(const std::vector<LensRecord>& records);

/// Share of records whose final top-1 token is the gold token.
AccuracyResult record_accuracy(const std::vector<LensRecord>& records);

/// Pearson correlation over layers where both series have a value.
std::optional<double> pearson(const LayerSeries& a, const LayerSeries& b);

}  // namespace numlens
