// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include <set>

#include <gtest/gtest.h>

#include "numlens/dataset.hpp"
#include "numlens/runtime.hpp"
#include "numlens/synthetic.hpp"
#include "support.hpp"

using namespace numlens;

namespace {

const Tokenizer& gpt2() {
  static const Tokenizer t = Tokenizer::load_dir(testsupport::data_dir() / "gpt2");
  return t;
}
const Tokenizer& neox() {
  static const Tokenizer t = Tokenizer::load_dir(testsupport::data_dir() / "neox");
  return t;
}

DatasetSpec spec(std::vector<Op> ops, SizeClass sc, std::size_t count, std::uint64_t seed = 1) {
  DatasetSpec s;
  s.operators = std::move(ops);
  s.n_operands = s.operators.size() + 1;
  s.size_class = sc;
  s.count = count;
  s.seed = seed;
  return s;
}

// Counts valid tuples by plain nested loops.
std::uint64_t brute_force_space(const std::vector<Op>& ops, std::int64_t bound, const Tokenizer& tok) {
  auto ok = [&](std::int64_t v) { return v >= 0 && v <= bound && tok.integer_token(v, true).has_value(); };
  std::uint64_t n = 0;
  for (std::int64_t a = 0; a <= bound; ++a) {
    if (!ok(a)) continue;
    for (std::int64_t b = 0; b <= bound; ++b) {
      if (!ok(b)) continue;
      const std::int64_t ab = ops[0] == Op::Add ? a + b : a - b;
      if (ops.size() == 1) {
        n += ok(ab);
        continue;
      }
      for (std::int64_t c = 0; c <= bound; ++c) {
        if (ok(c)) n += ok(ops[1] == Op::Add ? ab + c : ab - c);
      }
    }
  }
  return n;
}

}  // namespace

TEST(Dataset, WorkedExamples) {
  auto q = make_query({306, 136}, {Op::Add}, 520, neox());
  ASSERT_TRUE(q);
  EXPECT_EQ(q->prompt, "Please calculate 306 + 136 =");
  EXPECT_EQ(q->gold_result, 442);
  EXPECT_EQ(q->gold_token, *neox().integer_token(442, true));
  // " 442" is not one GPT-2 token, so the same query is not admissible there.
  EXPECT_FALSE(make_query({306, 136}, {Op::Add}, 520, gpt2()));

  q = make_query({75, 16, 48}, {Op::Add, Op::Sub}, 99, gpt2());
  ASSERT_TRUE(q);
  EXPECT_EQ(q->prompt, "Please calculate 75 + 16 - 48 =");
  EXPECT_EQ(q->gold_result, 43);

  q = make_query({0, 0}, {Op::Add}, 99, gpt2());
  ASSERT_TRUE(q);
  EXPECT_EQ(q->prompt, "Please calculate 0 + 0 =");
  EXPECT_EQ(q->gold_token, *gpt2().integer_token(0, true));

  EXPECT_FALSE(make_query({5, 9}, {Op::Sub}, 99, gpt2()));     // negative result
  EXPECT_FALSE(make_query({60, 50}, {Op::Add}, 99, gpt2()));   // result above bound
  EXPECT_FALSE(make_query({100, 0}, {Op::Add}, 99, gpt2()));   // operand above bound
  // Intermediate values may leave the range as long as the result is inside it.
  EXPECT_TRUE(make_query({90, 90, 95}, {Op::Add, Op::Sub}, 99, gpt2()));
}

TEST(Dataset, SpaceSizeMatchesBruteForce) {
  for (const auto* tok : {&gpt2(), &neox()}) {
    for (auto ops : {std::vector<Op>{Op::Add}, std::vector<Op>{Op::Sub}}) {
      for (auto sc : {SizeClass::Small, SizeClass::Large}) {
        const auto s = spec(ops, sc, 1);
        EXPECT_EQ(valid_space_size(s, *tok), brute_force_space(ops, s.bound(), *tok));
      }
    }
    const auto s3 = spec({Op::Add, Op::Sub}, SizeClass::Small, 1);
    EXPECT_EQ(valid_space_size(s3, *tok), brute_force_space(s3.operators, 99, *tok));
  }
  EXPECT_EQ(valid_space_size(spec({Op::Add}, SizeClass::Small, 1), gpt2()), 5050u);
}

TEST(Dataset, GeneratedQueriesAreValidDistinctAndDeterministic) {
  const auto s = spec({Op::Add}, SizeClass::Large, 500, 17);
  const auto a = generate(s, gpt2());
  const auto b = generate(s, gpt2());
  ASSERT_EQ(a.queries.size(), 500u);
  EXPECT_EQ(to_jsonl(a), to_jsonl(b));
  EXPECT_EQ(a.spec.name, "add_large");
  EXPECT_EQ(a.queries[0].id, "add_large-00000");
  EXPECT_EQ(a.queries[499].id, "add_large-00499");
  std::set<std::vector<std::int64_t>> seen;
  for (const auto& q : a.queries) {
    EXPECT_TRUE(revalidate(q, a.spec, gpt2()).empty()) << q.prompt;
    EXPECT_TRUE(seen.insert(q.operands).second) << q.prompt;
  }
  const auto c = generate(spec({Op::Add}, SizeClass::Large, 500, 18), gpt2());
  EXPECT_NE(to_jsonl(a), to_jsonl(c));
}

TEST(Dataset, ThreeOperandAndSubtraction) {
  for (auto ops : {std::vector<Op>{Op::Sub}, std::vector<Op>{Op::Add, Op::Sub}, std::vector<Op>{Op::Sub, Op::Add}}) {
    const auto d = generate(spec(ops, SizeClass::Small, 200, 3), neox());
    for (const auto& q : d.queries) {
      EXPECT_TRUE(revalidate(q, d.spec, neox()).empty()) << q.prompt;
      EXPECT_EQ(q.operands.size(), ops.size() + 1);
    }
  }
  EXPECT_EQ(spec({Op::Add, Op::Sub}, SizeClass::Large, 1).default_name(), "add_sub_large");
}

TEST(Dataset, ExhaustionAndInfeasibleCount) {
  auto s = spec({Op::Add}, SizeClass::Small, 5050, 9);
  const auto d = generate(s, gpt2());
  std::set<std::vector<std::int64_t>> all;
  for (const auto& q : d.queries) all.insert(q.operands);
  EXPECT_EQ(all.size(), 5050u);
  s.count = 5051;
  try {
    generate(s, gpt2());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
    EXPECT_NE(std::string(e.what()).find("only 5050 valid queries"), std::string::npos);
  }
}

TEST(Dataset, SamplingLooksUniform) {
  // With a+b <= 99 the first operand a has weight (100 - a); its mean is 33.
  const auto d = generate(spec({Op::Add}, SizeClass::Small, 3000, 5), gpt2());
  double mean = 0;
  for (const auto& q : d.queries) mean += static_cast<double>(q.operands[0]);
  mean /= 3000.0;
  EXPECT_NEAR(mean, 33.0, 1.5);
}

TEST(Dataset, RevalidationCatchesTampering) {
  auto d = generate(spec({Op::Add}, SizeClass::Small, 5, 2), gpt2());
  auto q = d.queries[0];
  q.gold_result += 1;
  EXPECT_FALSE(revalidate(q, d.spec, gpt2()).empty());
  q = d.queries[1];
  q.prompt += " ";
  EXPECT_EQ(revalidate(q, d.spec, gpt2()), std::vector<std::string>{"prompt"});
  q = d.queries[2];
  q.gold_token = 0;
  EXPECT_EQ(revalidate(q, d.spec, gpt2()), std::vector<std::string>{"gold_token"});
}

TEST(Dataset, SpecValidation) {
  auto s = spec({Op::Add}, SizeClass::Small, 5);
  s.n_operands = 3;
  EXPECT_THROW(s.validate(), Error);
  EXPECT_THROW(spec({}, SizeClass::Small, 5).validate(), Error);
  EXPECT_THROW(spec({Op::Add, Op::Add, Op::Add}, SizeClass::Small, 5).validate(), Error);
  EXPECT_THROW(spec({Op::Add}, SizeClass::Small, 0).validate(), Error);
  try {
    DatasetSpec::from_json({{"operators", {"*"}}, {"size_class", "small"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  const auto round = DatasetSpec::from_json(spec({Op::Sub}, SizeClass::Large, 7, 4).to_json());
  EXPECT_EQ(round.to_json(), spec({Op::Sub}, SizeClass::Large, 7, 4).to_json());
}

TEST(Dataset, JsonlRoundTrip) {
  testsupport::TempDir dir;
  const auto d = generate(spec({Op::Add, Op::Sub}, SizeClass::Large, 50, 11), neox());
  write_dataset(d, dir / "d.jsonl");
  const auto r = read_dataset(dir / "d.jsonl");
  EXPECT_EQ(to_jsonl(r), to_jsonl(d));
  EXPECT_EQ(r.vocab_hash, neox().vocab_hash());
  EXPECT_EQ(r.queries[7].operators, d.queries[7].operators);
  EXPECT_THROW(from_jsonl("{\"schema\":\"other\"}\n"), Error);
  EXPECT_THROW(from_jsonl(""), Error);
}

TEST(Dataset, AccuracyAgreesWithDirectArgmax) {
  auto cfg = testsupport::tiny_config(Family::SequentialPreNorm);
  cfg.vocab_size = gpt2().vocab_size();
  cfg.max_context = 32;
  InMemoryWeights w(synthetic_weights(cfg, 21));
  const Model m(cfg, w);
  const auto d = generate(spec({Op::Add}, SizeClass::Small, 40, 6), gpt2());
  std::size_t correct = 0;
  for (const auto& q : d.queries) {
    const auto ids = gpt2().encode(q.prompt);
    const auto rec = forward_with_taps(m, ids, ids.size() - 1);
    correct += argmax(rec.final_logits) == static_cast<std::size_t>(q.gold_token);
  }
  const auto acc = evaluate_accuracy(m, gpt2(), d, 2);
  EXPECT_EQ(acc.total, 40u);
  EXPECT_EQ(acc.correct, correct);
  EXPECT_EQ(evaluate_accuracy(m, gpt2(), d, 1).correct, correct);
}

TEST(Dataset, AccuracyRejectsSmallerModelVocabulary) {
  const auto cfg = testsupport::tiny_config(Family::SequentialPreNorm);
  InMemoryWeights w(synthetic_weights(cfg, 1));
  const Model m(cfg, w);
  const auto d = generate(spec({Op::Add}, SizeClass::Small, 3, 6), gpt2());
  try {
    evaluate_accuracy(m, gpt2(), d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
  }
}

TEST(Dataset, ArgmaxTiesTakeLowestIndex) {
  EXPECT_EQ(argmax({1.0f, 3.0f, 3.0f, 2.0f}), 1u);
  EXPECT_EQ(argmax({-1.0f}), 0u);
}
