// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "numlens/interventions.hpp"
#include "numlens/lens.hpp"
#include "numlens/runtime.hpp"
#include "numlens/synthetic.hpp"
#include "support.hpp"

using namespace numlens;
using nlohmann::json;

namespace {

const Tokenizer& gpt2() {
  static const Tokenizer t = Tokenizer::load_dir(testsupport::data_dir() / "gpt2");
  return t;
}

const Model& wide_model() {
  static const Model m = [] {
    auto cfg = testsupport::tiny_config(Family::ParallelRotary);
    cfg.vocab_size = gpt2().vocab_size();
    cfg.max_context = 32;
    cfg.n_layers = 3;
    InMemoryWeights w(synthetic_weights(cfg, 808, 3.0f));
    return Model(cfg, w);
  }();
  return m;
}

ArithmeticQuery query(std::vector<std::int64_t> ops, Op op, const std::string& id, std::int64_t bound = 520) {
  auto q = make_query(std::move(ops), {op}, bound, gpt2());
  EXPECT_TRUE(q);
  q->id = id;
  return *q;
}

Dataset small_dataset(std::size_t n) {
  DatasetSpec s;
  s.operators = {Op::Add};
  s.size_class = SizeClass::Small;
  s.count = n;
  s.seed = 31;
  return generate(s, gpt2());
}

}  // namespace

TEST(Interventions, HfInterchangeProbabilityDeltas) {
  for (const char* name : {"hf_gpt2_tiny", "hf_neox_tiny"}) {
    const auto dir = testsupport::fixture_dir() / name;
    const Model m = load_model(dir / "config.json", dir / "model.safetensors");
    const auto golden = testsupport::load_json(dir / "golden.json");
    const auto cfg = testsupport::load_json(dir / "config.json");
    const auto raw = testsupport::read_raw_safetensors(dir / "model.safetensors");
    for (const auto& ic : golden["interchanges"]) {
      const auto base = ic["base_tokens"].get<std::vector<TokenId>>();
      const auto source = ic["source_tokens"].get<std::vector<TokenId>>();
      const std::size_t layer = ic["layer"];
      const std::size_t pos = base.size() - 1;
      const auto src = forward_with_taps(m, source, pos);
      const auto unpatched = softmax(forward_with_taps(m, base, pos).final_logits);
      const auto patched = softmax(forward_with_patch(m, base, pos, {layer, src.attention_output[layer - 1]}).final_logits);
      const auto want = ic["prob_delta"].get<std::vector<double>>();
      // Independent double-precision oracle for the same interchange.
      const auto ref_src = testsupport::ref_forward(cfg, raw, source);
      const auto ref_base = testsupport::softmax_ref(testsupport::ref_forward(cfg, raw, base).final_logits);
      const auto ref_patched = testsupport::softmax_ref(
          testsupport::ref_forward(cfg, raw, base, testsupport::RefPatch{layer, ref_src.attn_out[layer - 1]}).final_logits);
      double err = 0, ref_err = 0;
      for (std::size_t i = 0; i < want.size(); ++i) {
        const double got = patched.probabilities[i] - unpatched.probabilities[i];
        err = std::max(err, std::fabs(got - want[i]));
        ref_err = std::max(ref_err, std::fabs(got - (ref_patched[i] - ref_base[i])));
      }
      EXPECT_LE(err, 1e-6) << name << " layer " << layer;
      EXPECT_LE(ref_err, 1e-6) << name << " layer " << layer;
    }
  }
}

TEST(Interventions, OperatorFlip) {
  const auto base = query({78, 62}, Op::Add, "add_large-00001");
  const auto r = derive_source(base, InterventionField::Operator, 0, gpt2(), 520);
  ASSERT_TRUE(r.pair) << r.skip_reason;
  EXPECT_EQ(r.pair->source.prompt, "Please calculate 78 - 62 =");
  EXPECT_EQ(r.pair->source.gold_result, 16);
  EXPECT_EQ(r.pair->id, "add_large-00001/operator");
  EXPECT_EQ(r.pair->source.id, "add_large-00001~operator");
  const auto back = derive_source(query({5, 5}, Op::Sub, "s"), InterventionField::Operator, 0, gpt2(), 99);
  ASSERT_TRUE(back.pair);
  EXPECT_EQ(back.pair->source.prompt, "Please calculate 5 + 5 =");
  // 62 - 78 is negative: no valid flip.
  const auto skip = derive_source(query({62, 78}, Op::Add, "n"), InterventionField::Operator, 0, gpt2(), 520);
  EXPECT_FALSE(skip.pair);
  EXPECT_FALSE(skip.skip_reason.empty());
}

TEST(Interventions, OperandReplacementKeepsInvariants) {
  DatasetSpec spec;
  spec.operators = {Op::Add};
  spec.size_class = SizeClass::Large;
  const auto base = query({78, 62}, Op::Add, "add_large-00001");
  for (auto field : {InterventionField::Operand1, InterventionField::Operand2}) {
    const auto a = derive_source(base, field, 9, gpt2(), 520);
    const auto b = derive_source(base, field, 9, gpt2(), 520);
    ASSERT_TRUE(a.pair) << a.skip_reason;
    EXPECT_EQ(a.pair->source.prompt, b.pair->source.prompt);
    const auto& s = a.pair->source;
    EXPECT_TRUE(revalidate(s, spec, gpt2()).empty()) << s.prompt;
    EXPECT_EQ(gpt2().encode(s.prompt).size(), gpt2().encode(base.prompt).size());
    const std::size_t slot = field == InterventionField::Operand1 ? 0 : 1;
    EXPECT_NE(s.operands[slot], base.operands[slot]);
    EXPECT_EQ(s.operands[1 - slot], base.operands[1 - slot]);
    EXPECT_EQ(s.operators, base.operators);
  }
  // Different seeds eventually pick different sources.
  bool differs = false;
  for (std::uint64_t seed = 1; seed < 10 && !differs; ++seed) {
    differs = derive_source(base, InterventionField::Operand2, seed, gpt2(), 520).pair->source.prompt !=
              derive_source(base, InterventionField::Operand2, 0, gpt2(), 520).pair->source.prompt;
  }
  EXPECT_TRUE(differs);
  EXPECT_FALSE(derive_source(*make_query({1, 2, 3}, {Op::Add, Op::Add}, 99, gpt2()), InterventionField::Operand1, 0,
                             gpt2(), 99)
                   .pair);
  EXPECT_EQ(parse_field("operand2"), InterventionField::Operand2);
  EXPECT_THROW(parse_field("operand3"), Error);
}

TEST(Interventions, RunInterchangeMatchesManualPatch) {
  const auto& m = wide_model();
  const auto pair = *derive_source(query({40, 12}, Op::Add, "p"), InterventionField::Operand2, 4, gpt2(), 99).pair;
  const auto bt = gpt2().encode(pair.base.prompt);
  const auto st = gpt2().encode(pair.source.prompt);
  const auto src = forward_with_taps(m, st, st.size() - 1);
  const auto base = softmax(forward_with_taps(m, bt, bt.size() - 1).final_logits);
  for (std::size_t layer = 1; layer <= 3; ++layer) {
    const auto p = softmax(forward_with_patch(m, bt, bt.size() - 1, {layer, src.attention_output[layer - 1]}).final_logits);
    const auto o = run_interchange(m, gpt2(), pair, layer);
    EXPECT_EQ(o.layer, layer);
    EXPECT_EQ(o.delta_base_prob, p.probabilities[pair.base.gold_token] - base.probabilities[pair.base.gold_token]);
    EXPECT_EQ(o.delta_source_prob,
              p.probabilities[pair.source.gold_token] - base.probabilities[pair.source.gold_token]);
  }
  EXPECT_THROW(run_interchange(m, gpt2(), pair, 4), Error);
}

TEST(Interventions, SelfInterchangeIsNoOp) {
  const auto& m = wide_model();
  auto q = query({33, 44}, Op::Add, "self");
  InterventionPair same{"self/operand2", q, q, InterventionField::Operand2};
  const auto r = sweep_layers(m, gpt2(), {same});
  for (const auto& o : r.per_pair[0].outcomes) {
    EXPECT_EQ(o.delta_base_prob, 0.0);
    EXPECT_EQ(o.delta_source_prob, 0.0);
  }
}

TEST(Interventions, SweepAggregatesPerPairResults) {
  const auto& m = wide_model();
  const auto ds = small_dataset(12);
  const auto set = derive_pairs(ds, InterventionField::Operand1, 5, gpt2(), 8);
  ASSERT_EQ(set.pairs.size(), 8u);
  const auto a = sweep_layers(m, gpt2(), set.pairs, {}, 1);
  auto reversed = set.pairs;
  std::reverse(reversed.begin(), reversed.end());
  const auto b = sweep_layers(m, gpt2(), reversed, {}, 3);
  EXPECT_EQ(sweep_means_csv(a), sweep_means_csv(b));
  EXPECT_EQ(sweep_to_jsonl(a, set.pairs), sweep_to_jsonl(b, reversed));
  EXPECT_TRUE(std::is_sorted(a.per_pair.begin(), a.per_pair.end(),
                             [](const auto& x, const auto& y) { return x.pair_id < y.pair_id; }));
  ASSERT_EQ(a.means.size(), 3u);
  for (std::size_t li = 0; li < 3; ++li) {
    double sb = 0, ss = 0;
    for (const auto& ps : a.per_pair) {
      const auto& pair = *std::find_if(set.pairs.begin(), set.pairs.end(), [&](auto& p) { return p.id == ps.pair_id; });
      const auto o = run_interchange(m, gpt2(), pair, li + 1);
      EXPECT_EQ(ps.outcomes[li].delta_base_prob, o.delta_base_prob);
      sb += o.delta_base_prob;
      ss += o.delta_source_prob;
    }
    EXPECT_NEAR(a.means[li].delta_base_prob, sb / 8.0, 1e-15);
    EXPECT_NEAR(a.means[li].delta_source_prob, ss / 8.0, 1e-15);
  }
  const auto sub = sweep_layers(m, gpt2(), set.pairs, {2});
  ASSERT_EQ(sub.means.size(), 1u);
  EXPECT_EQ(sub.means[0].delta_base_prob, a.means[1].delta_base_prob);
  const std::string csv = sweep_means_csv(sub);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "layer,n_pairs,mean_delta_base_prob,mean_delta_source_prob");
  EXPECT_EQ(csv.substr(csv.find('\n') + 1, 4), "2,8,");
}

TEST(Interventions, SweepErrors) {
  const auto& m = wide_model();
  EXPECT_THROW(sweep_layers(m, gpt2(), {}), Error);
  auto base = query({3, 4}, Op::Add, "add_small-00007");
  auto src = query({300, 4}, Op::Add, "x");
  InterventionPair bad{"add_small-00007/operand1", base, src, InterventionField::Operand1};
  if (gpt2().encode(base.prompt).size() == gpt2().encode(src.prompt).size()) GTEST_SKIP();
  try {
    sweep_layers(m, gpt2(), {bad});
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "intervene");
    EXPECT_EQ(e.query_id(), "add_small-00007");
  }
  EXPECT_THROW(sweep_layers(m, gpt2(), {bad}, {9}), Error);
}

TEST(Interventions, DerivePairsReportsSkips) {
  DatasetSpec s;
  s.operators = {Op::Add};
  s.size_class = SizeClass::Small;
  s.count = 30;
  s.seed = 2;
  const auto ds = generate(s, gpt2());
  const auto set = derive_pairs(ds, InterventionField::Operator, 0, gpt2());
  EXPECT_EQ(set.pairs.size() + set.skipped.size(), 30u);
  for (const auto& p : set.pairs) EXPECT_GE(p.base.operands[0], p.base.operands[1]);
  for (const auto& sk : set.skipped) EXPECT_FALSE(sk.reason.empty());
}
