// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "numlens/interventions.hpp"

#include <algorithm>
#include <exception>
#include <map>

#include <fmt/format.h>
#include <json.hpp>

#include "numlens/lens.hpp"
#include "numlens/parallel.hpp"
#include "numlens/prng.hpp"
#include "numlens/runtime.hpp"

namespace numlens {
using nlohmann::json;

std::string_view field_name(InterventionField f) {
  switch (f) {
    case InterventionField::Operand1: return "operand1";
    case InterventionField::Operand2: return "operand2";
    case InterventionField::Operator: return "operator";
  }
  return "?";
}

InterventionField parse_field(std::string_view s) {
  if (s == "operand1") return InterventionField::Operand1;
  if (s == "operand2") return InterventionField::Operand2;
  if (s == "operator") return InterventionField::Operator;
  throw_error(ErrorKind::Config, fmt::format("unknown intervention field '{}'", s));
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string source_id(const ArithmeticQuery& base, InterventionField f) {
  return fmt::format("{}~{}", base.id, field_name(f));
}

}  // namespace

DeriveResult derive_source(const ArithmeticQuery& base, InterventionField field, std::uint64_t seed,
                           const Tokenizer& tokenizer, std::int64_t bound) {
  DeriveResult res;
  if (base.operands.size() != 2) {
    res.skip_reason = "base query is not 2-operand";
    return res;
  }
  const std::size_t base_len = tokenizer.encode(base.prompt).size();
  auto finish = [&](ArithmeticQuery src) {
    src.id = source_id(base, field);
    res.pair = InterventionPair{fmt::format("{}/{}", base.id, field_name(field)), base, std::move(src), field};
    return res;
  };

  if (field == InterventionField::Operator) {
    const Op flipped = base.operators[0] == Op::Add ? Op::Sub : Op::Add;
    auto src = make_query(base.operands, {flipped}, bound, tokenizer);
    if (!src) {
      res.skip_reason = fmt::format("operator flip gives {} which is outside [0, {}] or not a single token",
                                    evaluate(base.operands, {flipped}), bound);
      return res;
    }
    if (tokenizer.encode(src->prompt).size() != base_len) {
      res.skip_reason = "operator flip changes the prompt token length";
      return res;
    }
    return finish(std::move(*src));
  }

  const std::size_t slot = field == InterventionField::Operand1 ? 0 : 1;
  std::vector<ArithmeticQuery> candidates;
  for (std::int64_t v = 0; v <= bound; ++v) {
    if (v == base.operands[slot]) continue;
    auto ops = base.operands;
    ops[slot] = v;
    auto q = make_query(std::move(ops), base.operators, bound, tokenizer);
    if (q && tokenizer.encode(q->prompt).size() == base_len) candidates.push_back(std::move(*q));
  }
  if (candidates.empty()) {
    res.skip_reason = fmt::format("no replacement for {} keeps bounds and token length", field_name(field));
    return res;
  }
  Prng rng(mix_seed(seed, fnv1a(base.id)));
  return finish(std::move(candidates[rng.below(candidates.size())]));
}

PairSet derive_pairs(const Dataset& dataset, InterventionField field, std::uint64_t seed,
                     const Tokenizer& tokenizer, std::size_t max_pairs) {
  PairSet set;
  for (const auto& q : dataset.queries) {
    if (max_pairs != 0 && set.pairs.size() >= max_pairs) break;
    DeriveResult r = derive_source(q, field, seed, tokenizer, dataset.spec.bound());
    if (r.pair) {
      set.pairs.push_back(std::move(*r.pair));
    } else {
      set.skipped.push_back({q.id, r.skip_reason});
    }
  }
  return set;
}

namespace {

struct PairRuns {
  std::vector<TokenId> base_tokens;
  TapRecord base;
  TapRecord source;
  Distribution base_dist;
};

PairRuns prepare(const Model& model, const Tokenizer& tokenizer, const InterventionPair& pair) {
  PairRuns p;
  p.base_tokens = tokenizer.encode(pair.base.prompt);
  const auto src_tokens = tokenizer.encode(pair.source.prompt);
  if (p.base_tokens.size() != src_tokens.size()) {
    throw_error(ErrorKind::Input, fmt::format("pair {}: base has {} tokens, source has {}", pair.id,
                                              p.base_tokens.size(), src_tokens.size()));
  }
  const std::size_t pos = p.base_tokens.size() - 1;
  p.base = forward_with_taps(model, p.base_tokens, pos);
  p.source = forward_with_taps(model, src_tokens, pos);
  p.base_dist = softmax(p.base.final_logits);
  return p;
}

InterventionOutcome patch_layer(const Model& model, const InterventionPair& pair, const PairRuns& p,
                                std::size_t layer, bool check_locality) {
  const std::size_t pos = p.base_tokens.size() - 1;
  const TapRecord patched =
      forward_with_patch(model, p.base_tokens, pos, {layer, p.source.attention_output.at(layer - 1)});
  if (check_locality) {
    for (std::size_t l = 0; l + 1 < layer; ++l) {
      if (patched.post_attention[l] != p.base.post_attention[l] || patched.post_mlp[l] != p.base.post_mlp[l]) {
        throw_error(ErrorKind::Runtime, fmt::format("pair {}: patch at layer {} changed taps at layer {}", pair.id,
                                                    layer, l + 1));
      }
    }
  }
  const Distribution d = softmax(patched.final_logits);
  InterventionOutcome o;
  o.layer = layer;
  o.delta_base_prob = d.probabilities.at(pair.base.gold_token) - p.base_dist.probabilities.at(pair.base.gold_token);
  o.delta_source_prob =
      d.probabilities.at(pair.source.gold_token) - p.base_dist.probabilities.at(pair.source.gold_token);
  return o;
}

}  // namespace

InterventionOutcome run_interchange(const Model& model, const Tokenizer& tokenizer, const InterventionPair& pair,
                                    std::size_t layer) {
  if (layer < 1 || layer > model.config().n_layers) {
    throw_error(ErrorKind::Input, fmt::format("layer {} out of range [1, {}]", layer, model.config().n_layers));
  }
  return patch_layer(model, pair, prepare(model, tokenizer, pair), layer, false);
}

SweepResult sweep_layers(const Model& model, const Tokenizer& tokenizer, const std::vector<InterventionPair>& pairs,
                         std::vector<std::size_t> layers, std::size_t workers) {
  if (pairs.empty()) throw_error(ErrorKind::Input, "intervention sweep needs at least one pair");
  const std::size_t n_layers = model.config().n_layers;
  if (layers.empty()) {
    for (std::size_t l = 1; l <= n_layers; ++l) layers.push_back(l);
  }
  for (std::size_t l : layers) {
    if (l < 1 || l > n_layers) throw_error(ErrorKind::Input, fmt::format("layer {} out of range [1, {}]", l, n_layers));
  }

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return pairs[a].id < pairs[b].id; });

  SweepResult res;
  res.layers = layers;
  res.per_pair.resize(pairs.size());
  parallel_for(pairs.size(), workers, [&](std::size_t i) {
    const InterventionPair& pair = pairs[order[i]];
    try {
      const PairRuns runs = prepare(model, tokenizer, pair);
      PairSweep ps{pair.id, {}};
      for (std::size_t l : layers) ps.outcomes.push_back(patch_layer(model, pair, runs, l, true));
      res.per_pair[i] = std::move(ps);
    } catch (const std::exception& e) {
      throw StageError("intervene", pair.base.id, e.what());
    }
  });

  for (std::size_t li = 0; li < layers.size(); ++li) {
    InterventionOutcome m;
    m.layer = layers[li];
    for (const auto& ps : res.per_pair) {
      m.delta_base_prob += ps.outcomes[li].delta_base_prob;
      m.delta_source_prob += ps.outcomes[li].delta_source_prob;
    }
    m.delta_base_prob /= static_cast<double>(pairs.size());
    m.delta_source_prob /= static_cast<double>(pairs.size());
    res.means.push_back(m);
  }
  return res;
}

std::string sweep_to_jsonl(const SweepResult& r, const std::vector<InterventionPair>& pairs, const json& header) {
  std::map<std::string, const InterventionPair*> by_id;
  for (const auto& p : pairs) by_id[p.id] = &p;
  json h = header;
  h["schema"] = kInterventionSchema;
  h["pairs"] = r.per_pair.size();
  h["layers"] = r.layers;
  std::string out = h.dump();
  out += '\n';
  for (const auto& ps : r.per_pair) {
    const InterventionPair* p = by_id.at(ps.pair_id);
    for (const auto& o : ps.outcomes) {
      out += json{{"pair_id", ps.pair_id},
                  {"field", field_name(p->field)},
                  {"base_prompt", p->base.prompt},
                  {"source_prompt", p->source.prompt},
                  {"layer", o.layer},
                  {"delta_base_prob", o.delta_base_prob},
                  {"delta_source_prob", o.delta_source_prob}}
                 .dump();
      out += '\n';
    }
  }
  return out;
}

std::string sweep_means_csv(const SweepResult& r) {
  std::string out = "layer,n_pairs,mean_delta_base_prob,mean_delta_source_prob\n";
  for (const auto& m : r.means) {
    out += fmt::format("{},{},{:.17g},{:.17g}\n", m.layer, r.per_pair.size(), m.delta_base_prob, m.delta_source_prob);
  }
  return out;
}

}  // namespace numlens
