// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "numlens/error.hpp"

namespace numlens {

/// Byte-level BPE tokenizer reading the published vocab.json / merges.txt
/// formats (GPT-2, GPT-NeoX). Immutable after load; every method is reentrant.
class Tokenizer {
 public:
  /// added_tokens (optional) is a JSON map content -> id for ids past the BPE
  /// vocabulary. Added tokens decode and classify normally but are never
  /// produced by encode.
  static Tokenizer load(const std::filesystem::path& vocab, const std::filesystem::path& merges,
                        const std::optional<std::filesystem::path>& added_tokens = std::nullopt);
  /// dir/vocab.json, dir/merges.txt and, if present, dir/added_tokens.json.
  static Tokenizer load_dir(const std::filesystem::path& dir);

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  /// Raw bytes of one token.
  const std::string& token_bytes(TokenId id) const;
  std::size_t vocab_size() const { return tokens_.size(); }

  /// Id of the single token spelling n (optionally with one leading space).
  /// Negative n has none.
  std::optional<TokenId> integer_token(std::int64_t n, bool space_prefixed) const;
  std::optional<TokenId> find_token(std::string_view bytes) const;

  /// Numerical iff the token, after stripping at most one leading space, is a
  /// non-empty run of ASCII digits.
  bool is_numerical(TokenId id) const;
  /// Integer value of a numerical token's digit string.
  std::optional<double> numeric_value(TokenId id) const;
  std::size_t numerical_count() const { return numerical_count_; }

  /// SHA-256 over the vocabulary, merges and added-token inputs.
  const std::string& vocab_hash() const { return hash_; }

 private:
  struct PairHash {
    std::size_t operator()(std::uint64_t k) const noexcept { return std::hash<std::uint64_t>{}(k); }
  };
  struct Merge {
    std::uint32_t rank;
    TokenId result;
  };

  void check_id(TokenId id) const;
  void bpe(std::string_view piece, std::vector<TokenId>& out) const;

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::unordered_map<std::uint64_t, Merge, PairHash> merges_;
  TokenId byte_token_[256] = {};
  std::size_t bpe_size_ = 0;
  std::vector<std::uint8_t> numerical_;
  std::vector<double> values_;
  std::size_t numerical_count_ = 0;
  std::string hash_;
};

namespace unicode {

/// Code point classes used by the GPT-2 pre-tokenizer.
bool is_letter(char32_t c);
bool is_number(char32_t c);
bool is_whitespace(char32_t c);

/// Splits text into pre-tokenizer pieces:
/// 's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
/// Bytes that are not valid UTF-8 are treated as single non-letter,
/// non-number, non-space characters.
std::vector<std::string_view> pretokenize(std::string_view text);

}  // namespace unicode
}  // namespace numlens
