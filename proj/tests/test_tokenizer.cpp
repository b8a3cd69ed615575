// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <set>

#include <fstream>
#include <gtest/gtest.h>

#include "numlens/tokenizer.hpp"
#include "support.hpp"

using namespace numlens;
using nlohmann::json;

namespace {

struct Vocab {
  std::string name;
  std::size_t bpe_entries;
};

const Tokenizer& tokenizer(const std::string& name) {
  static std::map<std::string, Tokenizer> cache;
  auto it = cache.find(name);
  if (it == cache.end()) it = cache.emplace(name, Tokenizer::load_dir(testsupport::data_dir() / name)).first;
  return it->second;
}

const json& facts_file(const std::string& name) {
  static std::map<std::string, json> cache;
  auto it = cache.find(name);
  if (it == cache.end()) {
    it = cache.emplace(name, testsupport::load_json(testsupport::fixture_dir() / (name + "_tokenizer.json"))).first;
  }
  return it->second;
}

class Vocabularies : public ::testing::TestWithParam<std::string> {};

}  // namespace

TEST_P(Vocabularies, EncodingsMatchReferenceTokenizer) {
  const auto& tok = tokenizer(GetParam());
  const auto& enc = facts_file(GetParam())["encodings"];
  ASSERT_GE(enc.size(), 200u);
  for (const auto& e : enc) {
    const std::string text = e["text"];
    const auto ids = tok.encode(text);
    EXPECT_EQ(ids, e["ids"].get<std::vector<TokenId>>()) << "text: " << text;
    EXPECT_EQ(tok.decode(ids), text);
  }
}

TEST_P(Vocabularies, VocabularyFacts) {
  const auto& tok = tokenizer(GetParam());
  const auto& f = facts_file(GetParam())["facts"];
  EXPECT_EQ(tok.vocab_size(), f["vocab_size"].get<std::size_t>());
  EXPECT_EQ(tok.numerical_count(), f["numerical_count"].get<std::size_t>());
  std::vector<TokenId> head;
  for (TokenId id = 0; id < static_cast<TokenId>(tok.vocab_size()) && head.size() < 50; ++id) {
    if (tok.is_numerical(id)) head.push_back(id);
  }
  EXPECT_EQ(head, f["numerical_ids_head"].get<std::vector<TokenId>>());
  for (const auto& [token, id] : f["known_tokens"].items()) {
    // Byte-level rendering: 'Ġ' is a space and 'Ċ' a newline.
    std::string bytes;
    for (std::size_t i = 0; i < token.size(); ++i) {
      if (token.compare(i, 2, "\xC4\xA0") == 0) {
        bytes += ' ';
        ++i;
      } else if (token.compare(i, 2, "\xC4\x8A") == 0) {
        bytes += '\n';
        ++i;
      } else {
        bytes += token[i];
      }
    }
    EXPECT_EQ(tok.find_token(bytes), id.get<TokenId>()) << token;
  }
}

TEST_P(Vocabularies, IntegerTokens) {
  const auto& tok = tokenizer(GetParam());
  const auto& f = facts_file(GetParam())["facts"];
  for (const char* key : {"spaced_integer_ids", "bare_integer_ids"}) {
    const bool spaced = std::string(key) == "spaced_integer_ids";
    for (const auto& [n, id] : f[key].items()) {
      const auto got = tok.integer_token(std::stoll(n), spaced);
      if (id.is_null()) {
        EXPECT_FALSE(got) << key << " " << n;
      } else {
        ASSERT_TRUE(got) << key << " " << n;
        EXPECT_EQ(*got, id.get<TokenId>());
        EXPECT_TRUE(tok.is_numerical(*got));
        EXPECT_EQ(tok.numeric_value(*got), static_cast<double>(std::stoll(n)));
      }
    }
  }
  std::set<TokenId> seen;
  std::size_t present = 0;
  for (int n = 0; n <= 520; ++n) {
    if (auto id = tok.integer_token(n, true)) {
      ++present;
      seen.insert(*id);
    }
  }
  EXPECT_EQ(seen.size(), present);
}

TEST_P(Vocabularies, RandomAsciiRoundTrips) {
  const auto& tok = tokenizer(GetParam());
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    std::string s(rng() % 64, ' ');
    for (char& c : s) c = static_cast<char>(rng() % 128);
    EXPECT_EQ(tok.decode(tok.encode(s)), s);
  }
  // Every byte that can occur in UTF-8 text.
  std::string bytes;
  for (int b = 0; b < 256; ++b) {
    if (b != 0xc0 && b != 0xc1 && b < 0xf5) bytes += static_cast<char>(b);
  }
  EXPECT_EQ(tok.decode(tok.encode(bytes)), bytes);
}

TEST_P(Vocabularies, EdgeCases) {
  const auto& tok = tokenizer(GetParam());
  EXPECT_TRUE(tok.encode("").empty());
  EXPECT_EQ(tok.decode(std::vector<TokenId>{}), "");
  const std::vector<TokenId> bad = {static_cast<TokenId>(tok.vocab_size())};
  try {
    tok.decode(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
  }
  const std::vector<TokenId> neg = {-1};
  EXPECT_THROW(tok.decode(neg), Error);
  EXPECT_FALSE(tok.is_numerical(tok.encode(" +")[0]));
  EXPECT_FALSE(tok.integer_token(-3, true));
  EXPECT_EQ(tok.vocab_hash().size(), 64u);
}

INSTANTIATE_TEST_SUITE_P(Data, Vocabularies, ::testing::Values("gpt2", "neox"));

TEST(Tokenizer, VocabularyDifferences) {
  const auto& g = tokenizer("gpt2");
  const auto& n = tokenizer("neox");
  EXPECT_NE(g.vocab_hash(), n.vocab_hash());
  // " 442" is not a single GPT-2 token; the pieces still decode back.
  EXPECT_FALSE(g.integer_token(442, true));
  EXPECT_TRUE(g.integer_token(442, false));
  EXPECT_EQ(g.encode(" 442").size(), 2u);
  EXPECT_TRUE(n.integer_token(442, true));
  EXPECT_EQ(g.integer_token(306, true), g.encode(" 306")[0]);
  EXPECT_EQ(g.numerical_count(), 1691u);
  EXPECT_EQ(n.numerical_count(), 2036u);
}

TEST(Tokenizer, AddedTokensDecodeButAreNotProduced) {
  const auto& n = tokenizer("neox");
  const std::vector<TokenId> id = {50254};
  EXPECT_EQ(n.decode(id), std::string(24, ' '));
  for (TokenId t : n.encode(std::string(24, ' '))) EXPECT_LT(t, 50254);
}

TEST(Pretokenizer, SplitsLikeTheReferencePattern) {
  auto pieces = [](std::string_view s) {
    std::vector<std::string> out;
    for (auto p : unicode::pretokenize(s)) out.emplace_back(p);
    return out;
  };
  using V = std::vector<std::string>;
  EXPECT_EQ(pieces("Please calculate 306 + 136 ="), (V{"Please", " calculate", " 306", " +", " 136", " ="}));
  EXPECT_EQ(pieces("it's  x"), (V{"it", "'s", " ", " x"}));
  EXPECT_EQ(pieces("a  \n b"), (V{"a", "  \n", " b"}));
  EXPECT_EQ(pieces("end   "), (V{"end", "   "}));
  EXPECT_EQ(pieces("x1y"), (V{"x", "1", "y"}));
  EXPECT_TRUE(unicode::is_letter(U'é'));
  EXPECT_TRUE(unicode::is_number(U'٣'));
  EXPECT_TRUE(unicode::is_whitespace(U'　'));
  EXPECT_FALSE(unicode::is_letter(U'7'));
}

TEST(Tokenizer, MalformedInputs) {
  testsupport::TempDir dir;
  std::ofstream(dir / "vocab.json") << R"({"a": 0, "b": 2})";
  std::ofstream(dir / "merges.txt") << "#version: 0.2\n";
  try {
    Tokenizer::load(dir / "vocab.json", dir / "merges.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Load);
  }
  EXPECT_THROW(Tokenizer::load(dir / "absent.json", dir / "merges.txt"), Error);
}
