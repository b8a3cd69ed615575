// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "numlens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

namespace numlens {
namespace {

// Records in query-id order so reductions never depend on input order.
std::vector<const LensRecord*> sorted(const std::vector<LensRecord>& records) {
  if (records.empty()) throw_error(ErrorKind::Input, "metrics need a non-empty record corpus");
  std::vector<const LensRecord*> out;
  for (const auto& r : records) out.push_back(&r);
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->query_id < b->query_id; });
  const std::size_t n = out.front()->n_layers;
  for (auto* r : out) {
    if (r->n_layers != n) throw_error(ErrorKind::Input, "records come from models with different depths");
  }
  return out;
}

// per_layer[l] holds the qualifying per-query values at layer l + 1.
LayerSeries build(SiteKind site, std::string statistic, std::vector<std::vector<double>> per_layer) {
  LayerSeries s{site, std::move(statistic), {}};
  for (auto& v : per_layer) {
    if (v.empty()) {
      s.values.push_back(std::nullopt);
    } else {
      s.values.push_back(summarize_values(std::move(v)));
    }
  }
  return s;
}

void check_k(const IntermediatePrediction& ip, std::size_t k) {
  if (k == 0 || k > ip.topk.size()) {
    throw_error(ErrorKind::Input, fmt::format("k = {} exceeds the stored top-{}", k, ip.topk.size()));
  }
}

bool rank1_at(const IntermediatePrediction& ip, TokenId t) {
  auto it = ip.targets.find(t);
  if (it == ip.targets.end()) throw_error(ErrorKind::Input, fmt::format("token {} is not a record target", t));
  return it->second.rank == 1;
}

// First layer (1-based) at which token t is rank 1 post-ATT.
std::optional<std::size_t> first_rank1_layer(const LensRecord& r, TokenId t) {
  for (std::size_t l = 1; l <= r.n_layers; ++l) {
    if (rank1_at(r.at({l, SiteKind::PostAttention}), t)) return l;
  }
  return std::nullopt;
}

TokenId target_token(const LensRecord& r, TargetKind target) {
  if (target == TargetKind::Gold) return r.gold_token;
  const std::size_t i = static_cast<std::size_t>(target) - 1;
  if (i >= r.operand_tokens.size()) throw_error(ErrorKind::Input, "record " + r.query_id + " lacks that operand");
  return r.operand_tokens[i];
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

SeriesPoint summarize_values(std::vector<double> v) {
  SeriesPoint p;
  p.n = v.size();
  if (v.empty()) return p;
  p.mean = mean_of(v);
  std::sort(v.begin(), v.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  p.q1 = quantile(0.25);
  p.median = quantile(0.5);
  p.q3 = quantile(0.75);
  return p;
}

LayerSeries numerical_mass_series(const std::vector<LensRecord>& records, SiteKind site) {
  const auto rs = sorted(records);
  std::vector<std::vector<double>> per(rs.front()->n_layers);
  for (auto* r : rs) {
    for (std::size_t l = 1; l <= r->n_layers; ++l) {
      const auto& ip = r->at({l, site});
      if (!ip.numerical_mass) throw_error(ErrorKind::Input, "record " + r->query_id + " lacks numerical mass");
      per[l - 1].push_back(*ip.numerical_mass);
    }
  }
  return build(site, "numerical_mass", std::move(per));
}

LayerSeries topk_numerical_proportion(const std::vector<LensRecord>& records, SiteKind site, std::size_t k) {
  const auto rs = sorted(records);
  std::vector<std::vector<double>> per(rs.front()->n_layers);
  for (auto* r : rs) {
    for (std::size_t l = 1; l <= r->n_layers; ++l) {
      const auto& ip = r->at({l, site});
      check_k(ip, k);
      std::size_t num = 0;
      for (std::size_t i = 0; i < k; ++i) num += numerical_text_value(ip.topk[i].text).has_value();
      per[l - 1].push_back(static_cast<double>(num) / static_cast<double>(k));
    }
  }
  return build(site, fmt::format("top{}_numerical_proportion", k), std::move(per));
}

LayerSeries absolute_error_series(const std::vector<LensRecord>& records, SiteKind site, std::size_t k) {
  const auto rs = sorted(records);
  std::vector<std::vector<double>> per(rs.front()->n_layers);
  for (auto* r : rs) {
    const double gold = static_cast<double>(r->gold_result);
    for (std::size_t l = 1; l <= r->n_layers; ++l) {
      const auto& ip = r->at({l, site});
      check_k(ip, k);
      std::vector<double> errs;
      for (std::size_t i = 0; i < k; ++i) {
        if (auto v = numerical_text_value(ip.topk[i].text)) errs.push_back(std::abs(*v - gold));
      }
      if (!errs.empty()) per[l - 1].push_back(mean_of(errs));
    }
  }
  return build(site, fmt::format("top{}_absolute_error", k), std::move(per));
}

std::string_view target_name(TargetKind t) {
  switch (t) {
    case TargetKind::Gold: return "gold";
    case TargetKind::Operand1: return "operand1";
    case TargetKind::Operand2: return "operand2";
    case TargetKind::Operand3: return "operand3";
  }
  return "?";
}

std::pair<LayerSeries, LayerSeries> target_trajectory(const std::vector<LensRecord>& records, SiteKind site,
                                                      TargetKind target) {
  const auto rs = sorted(records);
  const std::size_t n = rs.front()->n_layers;
  std::vector<std::vector<double>> ranks(n), probs(n);
  for (auto* r : rs) {
    const TokenId t = target_token(*r, target);
    for (std::size_t l = 1; l <= n; ++l) {
      const auto& ip = r->at({l, site});
      auto it = ip.targets.find(t);
      if (it == ip.targets.end()) {
        throw_error(ErrorKind::Input, fmt::format("record {} lacks target {}", r->query_id, target_name(target)));
      }
      ranks[l - 1].push_back(static_cast<double>(it->second.rank));
      probs[l - 1].push_back(it->second.probability);
    }
  }
  const std::string name(target_name(target));
  return {build(site, name + "_rank", std::move(ranks)), build(site, name + "_probability", std::move(probs))};
}

LayerSeries rank1_share_series(const std::vector<LensRecord>& records, SiteKind site, TargetKind target) {
  const auto rs = sorted(records);
  std::vector<std::vector<double>> per(rs.front()->n_layers);
  for (auto* r : rs) {
    const TokenId t = target_token(*r, target);
    for (std::size_t l = 1; l <= r->n_layers; ++l) per[l - 1].push_back(rank1_at(r->at({l, site}), t) ? 1.0 : 0.0);
  }
  return build(site, std::string(target_name(target)) + "_rank1_share", std::move(per));
}

PropagationStats operand_propagation_stats(const std::vector<LensRecord>& records) {
  const auto rs = sorted(records);
  const std::size_t n_ops = rs.front()->operand_tokens.size();
  PropagationStats st;
  st.n_queries = rs.size();
  std::vector<std::size_t> hits(n_ops, 0);
  std::vector<std::vector<double>> first(n_ops);
  std::size_t both = 0, exclusive = 0;
  for (auto* r : rs) {
    if (r->operand_tokens.size() != n_ops) throw_error(ErrorKind::Input, "records mix operand counts");
    std::size_t propagated = 0;
    std::vector<bool> got(n_ops, false);
    for (std::size_t i = 0; i < n_ops; ++i) {
      if (r->operand_tokens[i] < 0) throw_error(ErrorKind::Input, "record " + r->query_id + " lacks operand targets");
      if (auto l = first_rank1_layer(*r, r->operand_tokens[i])) {
        ++hits[i];
        first[i].push_back(static_cast<double>(*l));
        got[i] = true;
        ++propagated;
      }
    }
    if (n_ops >= 2 && got[0] && got[1]) ++both;
    if (propagated == 1) ++exclusive;
  }
  const double total = static_cast<double>(rs.size());
  for (std::size_t i = 0; i < n_ops; ++i) {
    OperandPropagation op;
    op.share = static_cast<double>(hits[i]) / total;
    if (!first[i].empty()) op.mean_first_layer = mean_of(first[i]);
    st.operands.push_back(op);
  }
  st.both_share = static_cast<double>(both) / total;
  st.mutual_exclusivity_share = static_cast<double>(exclusive) / total;
  return st;
}

std::vector<FrequentTokenEntry> frequent_token_table(const std::vector<LensRecord>& records, SiteKind site) {
  const auto rs = sorted(records);
  const double total = static_cast<double>(rs.size());
  std::vector<FrequentTokenEntry> out;
  for (std::size_t l = 1; l <= rs.front()->n_layers; ++l) {
    struct Acc {
      std::vector<double> probs;
      std::string text;
    };
    std::map<TokenId, Acc> top1;
    for (auto* r : rs) {
      const auto& ip = r->at({l, site});
      check_k(ip, 1);
      auto& a = top1[ip.topk[0].id];
      a.probs.push_back(ip.topk[0].probability);
      a.text = ip.topk[0].text;
    }
    for (const auto& [id, a] : top1) {
      const double share = static_cast<double>(a.probs.size()) / total;
      const double mean = mean_of(a.probs);
      if (share > 0.8 && mean > 0.5) out.push_back({l, site, id, a.text, mean, share});
    }
  }
  return out;
}

SufficiencyStats operand_sufficiency(const std::vector<LensRecord>& records) {
  const auto rs = sorted(records);
  SufficiencyStats st;
  st.n_queries = rs.size();
  const std::size_t n_operators = 2;
  std::vector<std::size_t> op_hits(n_operators, 0);
  for (auto* r : rs) {
    if (r->operand_tokens.size() != 3 || r->operator_tokens.size() != n_operators) {
      throw_error(ErrorKind::Input, "operand sufficiency needs 3-operand records; " + r->query_id + " is not");
    }
    std::size_t propagated = 0;
    for (TokenId t : r->operand_tokens) propagated += first_rank1_layer(*r, t).has_value();
    if (propagated < 2) ++st.insufficient;
    for (std::size_t i = 0; i < n_operators; ++i) op_hits[i] += first_rank1_layer(*r, r->operator_tokens[i]).has_value();
  }
  const double total = static_cast<double>(rs.size());
  st.insufficient_share = static_cast<double>(st.insufficient) / total;
  st.operator_pair_propagated = true;
  for (std::size_t h : op_hits) {
    st.operator_shares.push_back(static_cast<double>(h) / total);
    st.operator_pair_propagated = st.operator_pair_propagated && 2 * h > rs.size();
  }
  return st;
}

AccuracyResult record_accuracy(const std::vector<LensRecord>& records) {
  AccuracyResult a;
  for (auto* r : sorted(records)) {
    check_k(r->final_prediction, 1);
    a.correct += r->final_prediction.topk[0].id == r->gold_token;
    ++a.total;
  }
  return a;
}

std::optional<double> pearson(const LayerSeries& a, const LayerSeries& b) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < std::min(a.values.size(), b.values.size()); ++i) {
    if (a.values[i] && b.values[i]) {
      x.push_back(a.values[i]->mean);
      y.push_back(b.values[i]->mean);
    }
  }
  if (x.size() < 2) return std::nullopt;
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace numlens
