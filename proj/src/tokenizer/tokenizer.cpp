// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "numlens/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "numlens/hashing.hpp"

namespace numlens {
namespace unicode {
namespace {

struct CodepointRange {
  char32_t lo;
  char32_t hi;
};

#include "unicode_ranges.inc"

template <std::size_t N>
bool in_ranges(const CodepointRange (&table)[N], char32_t c) {
  auto it = std::upper_bound(std::begin(table), std::end(table), c,
                             [](char32_t v, const CodepointRange& r) { return v < r.lo; });
  return it != std::begin(table) && c <= std::prev(it)->hi;
}

constexpr char32_t kInvalid = 0xFFFFFFFF;

// Decodes one code point at s[i]; len receives its byte length. Malformed
// sequences yield kInvalid with length 1.
char32_t next_codepoint(std::string_view s, std::size_t i, std::size_t& len) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  len = 1;
  if (b0 < 0x80) return b0;
  std::size_t n = 0;
  char32_t cp = 0;
  char32_t min = 0;
  if ((b0 & 0xE0) == 0xC0) {
    n = 2, cp = b0 & 0x1F, min = 0x80;
  } else if ((b0 & 0xF0) == 0xE0) {
    n = 3, cp = b0 & 0x0F, min = 0x800;
  } else if ((b0 & 0xF8) == 0xF0) {
    n = 4, cp = b0 & 0x07, min = 0x10000;
  } else {
    return kInvalid;
  }
  if (i + n > s.size()) return kInvalid;
  for (std::size_t k = 1; k < n; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return kInvalid;
    cp = (cp << 6) | (b & 0x3F);
  }
  if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return kInvalid;
  len = n;
  return cp;
}

enum class Cls { Letter, Number, Space, Other };

Cls classify(char32_t c) {
  if (c == kInvalid) return Cls::Other;
  if (is_whitespace(c)) return Cls::Space;
  if (is_letter(c)) return Cls::Letter;
  if (is_number(c)) return Cls::Number;
  return Cls::Other;
}

}  // namespace

bool is_letter(char32_t c) { return in_ranges(kLetterRanges, c); }
bool is_number(char32_t c) { return in_ranges(kNumberRanges, c); }

bool is_whitespace(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

std::vector<std::string_view> pretokenize(std::string_view text) {
  struct Cp {
    std::size_t offset;
    char32_t cp;
    Cls cls;
  };
  std::vector<Cp> cps;
  for (std::size_t i = 0, len = 0; i < text.size(); i += len) {
    const char32_t c = next_codepoint(text, i, len);
    cps.push_back({i, c, classify(c)});
  }
  const std::size_t n = cps.size();
  auto off = [&](std::size_t k) { return k < n ? cps[k].offset : text.size(); };
  auto run_end = [&](std::size_t k, Cls cls) {
    while (k < n && cps[k].cls == cls) ++k;
    return k;
  };

  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < n) {
    std::size_t end = i;
    const char32_t c = cps[i].cp;
    if (c == U'\'' && i + 1 < n) {
      const char32_t a = cps[i + 1].cp;
      const char32_t b = i + 2 < n ? cps[i + 2].cp : 0;
      if (a == U's' || a == U't' || a == U'm' || a == U'd') {
        end = i + 2;
      } else if ((a == U'r' && b == U'e') || (a == U'v' && b == U'e') || (a == U'l' && b == U'l')) {
        end = i + 3;
      }
    }
    if (end == i) {
      const std::size_t j = (c == U' ' && i + 1 < n && cps[i + 1].cls != Cls::Space) ? i + 1 : i;
      if (cps[j].cls != Cls::Space) {
        end = run_end(j, cps[j].cls);
      } else {
        const std::size_t e = run_end(i, Cls::Space);
        // \s+(?!\S) leaves the last space for the following word when it can.
        end = (e < n && e - i >= 2) ? e - 1 : e;
      }
    }
    out.push_back(text.substr(off(i), off(end) - off(i)));
    i = end;
  }
  return out;
}

}  // namespace unicode

namespace {

// GPT-2's reversible byte <-> printable code point table.
std::array<char32_t, 256> byte_to_unicode_table() {
  std::array<char32_t, 256> t{};
  char32_t next = 256;
  for (int b = 0; b < 256; ++b) {
    const bool printable = (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
    t[b] = printable ? static_cast<char32_t>(b) : next++;
  }
  return t;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw_error(ErrorKind::Load, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Byte-level token string (UTF-8 of mapped code points) to raw bytes.
std::string unmap_bytes(std::string_view s, const std::unordered_map<char32_t, unsigned char>& inverse) {
  std::string out;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t len = 0;
    const char32_t cp = unicode::next_codepoint(s, i, len);
    auto it = inverse.find(cp);
    if (it == inverse.end()) throw_error(ErrorKind::Load, fmt::format("vocabulary entry is not byte-level: {}", s));
    out.push_back(static_cast<char>(it->second));
    i += len;
  }
  return out;
}

std::uint64_t pair_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

}  // namespace

Tokenizer Tokenizer::load(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path,
                          const std::optional<std::filesystem::path>& added_path) {
  Tokenizer t;
  const auto table = byte_to_unicode_table();
  std::unordered_map<char32_t, unsigned char> inverse;
  for (int b = 0; b < 256; ++b) inverse[table[b]] = static_cast<unsigned char>(b);

  const std::string vocab_text = read_file(vocab_path);
  const std::string merges_text = read_file(merges_path);
  std::string added_text;
  if (added_path) added_text = read_file(*added_path);

  nlohmann::json vocab;
  try {
    vocab = nlohmann::json::parse(vocab_text);
  } catch (const nlohmann::json::exception& e) {
    throw_error(ErrorKind::Load, "cannot parse vocabulary " + vocab_path.string() + ": " + e.what());
  }
  if (!vocab.is_object() || vocab.empty()) throw_error(ErrorKind::Load, "vocabulary must be a non-empty JSON object");
  t.bpe_size_ = vocab.size();
  t.tokens_.assign(vocab.size(), {});
  std::vector<std::uint8_t> seen(vocab.size(), 0);
  for (auto it = vocab.begin(); it != vocab.end(); ++it) {
    if (!it.value().is_number_integer()) throw_error(ErrorKind::Load, "vocabulary id is not an integer: " + it.key());
    const auto id = it.value().get<std::int64_t>();
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size() || seen[id]) {
      throw_error(ErrorKind::Load, fmt::format("vocabulary ids are not dense in [0, {})", vocab.size()));
    }
    seen[id] = 1;
    t.tokens_[id] = unmap_bytes(it.key(), inverse);
  }

  if (added_path) {
    nlohmann::json added;
    try {
      added = nlohmann::json::parse(added_text);
    } catch (const nlohmann::json::exception& e) {
      throw_error(ErrorKind::Load, "cannot parse added tokens " + added_path->string() + ": " + e.what());
    }
    std::vector<std::pair<std::int64_t, std::string>> extra;
    for (auto it = added.begin(); it != added.end(); ++it) extra.emplace_back(it.value().get<std::int64_t>(), it.key());
    std::sort(extra.begin(), extra.end());
    for (const auto& [id, content] : extra) {
      if (static_cast<std::size_t>(id) != t.tokens_.size()) {
        throw_error(ErrorKind::Load, "added token ids must continue the vocabulary densely");
      }
      t.tokens_.push_back(content);
    }
  }

  // Raw-bytes lookup prefers BPE entries over added tokens with the same bytes.
  for (std::size_t id = t.tokens_.size(); id-- > 0;) t.ids_[t.tokens_[id]] = static_cast<TokenId>(id);
  // Bytes that never occur in UTF-8 (0xc0, 0xc1, 0xf5-0xff) may be absent.
  for (int b = 0; b < 256; ++b) {
    auto it = t.ids_.find(std::string(1, static_cast<char>(b)));
    const bool present = it != t.ids_.end() && static_cast<std::size_t>(it->second) < t.bpe_size_;
    if (!present && b < 0x80) {
      throw_error(ErrorKind::Load, fmt::format("vocabulary lacks the single-byte token 0x{:02x}", b));
    }
    t.byte_token_[b] = present ? it->second : -1;
  }

  std::istringstream ms(merges_text);
  std::string line;
  std::uint32_t rank = 0;
  while (std::getline(ms, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.starts_with("#version")) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos) {
      throw_error(ErrorKind::Load, "malformed merge line: " + line);
    }
    const std::string a = unmap_bytes(std::string_view(line).substr(0, sp), inverse);
    const std::string b = unmap_bytes(std::string_view(line).substr(sp + 1), inverse);
    auto ia = t.ids_.find(a), ib = t.ids_.find(b), iab = t.ids_.find(a + b);
    if (ia == t.ids_.end() || ib == t.ids_.end() || iab == t.ids_.end()) {
      throw_error(ErrorKind::Load, "merge refers to tokens missing from the vocabulary: " + line);
    }
    t.merges_.emplace(pair_key(ia->second, ib->second), Merge{rank, iab->second});
    ++rank;
  }

  t.numerical_.assign(t.tokens_.size(), 0);
  t.values_.assign(t.tokens_.size(), 0.0);
  for (std::size_t id = 0; id < t.tokens_.size(); ++id) {
    std::string_view s = t.tokens_[id];
    if (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) continue;
    t.numerical_[id] = 1;
    t.values_[id] = std::stod(std::string(s));
    ++t.numerical_count_;
  }

  t.hash_ = sha256_hex(sha256_hex(vocab_text) + sha256_hex(merges_text) + sha256_hex(added_text));
  return t;
}

Tokenizer Tokenizer::load_dir(const std::filesystem::path& dir) {
  std::optional<std::filesystem::path> added;
  if (std::filesystem::exists(dir / "added_tokens.json")) added = dir / "added_tokens.json";
  return load(dir / "vocab.json", dir / "merges.txt", added);
}

void Tokenizer::bpe(std::string_view piece, std::vector<TokenId>& out) const {
  std::vector<TokenId> word;
  word.reserve(piece.size());
  for (char c : piece) {
    const TokenId id = byte_token_[static_cast<unsigned char>(c)];
    if (id < 0) throw_error(ErrorKind::Input, fmt::format("byte 0x{:02x} has no token", static_cast<unsigned char>(c)));
    word.push_back(id);
  }
  while (word.size() > 1) {
    std::uint32_t best = std::numeric_limits<std::uint32_t>::max();
    TokenId a = 0, b = 0, merged = 0;
    for (std::size_t i = 0; i + 1 < word.size(); ++i) {
      auto it = merges_.find(pair_key(word[i], word[i + 1]));
      if (it != merges_.end() && it->second.rank < best) {
        best = it->second.rank;
        a = word[i], b = word[i + 1], merged = it->second.result;
      }
    }
    if (best == std::numeric_limits<std::uint32_t>::max()) break;
    std::vector<TokenId> next;
    next.reserve(word.size());
    for (std::size_t i = 0; i < word.size(); ++i) {
      if (i + 1 < word.size() && word[i] == a && word[i + 1] == b) {
        next.push_back(merged);
        ++i;
      } else {
        next.push_back(word[i]);
      }
    }
    word = std::move(next);
  }
  out.insert(out.end(), word.begin(), word.end());
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  for (std::string_view piece : unicode::pretokenize(text)) bpe(piece, out);
  return out;
}

void Tokenizer::check_id(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw_error(ErrorKind::Input, fmt::format("token id {} out of range [0, {})", id, tokens_.size()));
  }
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    check_id(id);
    out += tokens_[id];
  }
  return out;
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
  check_id(id);
  return tokens_[id];
}

std::optional<TokenId> Tokenizer::find_token(std::string_view bytes) const {
  auto it = ids_.find(std::string(bytes));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<TokenId> Tokenizer::integer_token(std::int64_t n, bool space_prefixed) const {
  if (n < 0) return std::nullopt;
  return find_token(space_prefixed ? fmt::format(" {}", n) : fmt::format("{}", n));
}

bool Tokenizer::is_numerical(TokenId id) const {
  check_id(id);
  return numerical_[id] != 0;
}

std::optional<double> Tokenizer::numeric_value(TokenId id) const {
  if (!is_numerical(id)) return std::nullopt;
  return values_[id];
}

}  // namespace numlens
