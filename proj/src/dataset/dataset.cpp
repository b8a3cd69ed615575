// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "numlens/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

#include "numlens/parallel.hpp"
#include "numlens/prng.hpp"
#include "numlens/runtime.hpp"

namespace numlens {
using nlohmann::json;

namespace {

constexpr std::uint64_t kEnumerateLimit = 4'000'000;

Op parse_op(const std::string& s) {
  if (s == "+") return Op::Add;
  if (s == "-") return Op::Sub;
  throw_error(ErrorKind::Config, "unsupported operator '" + s + "' (expected + or -)");
}

std::string op_string(Op op) { return std::string(1, static_cast<char>(op)); }

// Operand values in [0, bound] with a single space-prefixed token.
std::vector<std::int64_t> allowed_values(std::int64_t bound, const Tokenizer& tok) {
  std::vector<std::int64_t> v;
  for (std::int64_t n = 0; n <= bound; ++n) {
    if (tok.integer_token(n, true)) v.push_back(n);
  }
  return v;
}

std::uint64_t pack(const std::vector<std::int64_t>& operands) {
  std::uint64_t key = 0;
  for (auto v : operands) key = (key << 16) | static_cast<std::uint64_t>(v);
  return key;
}

// Calls fn(operands) for every tuple over `allowed` in lexicographic order.
template <typename Fn>
void for_each_tuple(const std::vector<std::int64_t>& allowed, std::size_t arity, Fn&& fn) {
  std::vector<std::size_t> idx(arity, 0);
  std::vector<std::int64_t> ops(arity, allowed.empty() ? 0 : allowed[0]);
  if (allowed.empty()) return;
  for (;;) {
    fn(ops);
    std::size_t k = arity;
    while (k > 0) {
      --k;
      if (++idx[k] < allowed.size()) {
        ops[k] = allowed[idx[k]];
        break;
      }
      idx[k] = 0;
      ops[k] = allowed[0];
      if (k == 0) return;
    }
  }
}

}  // namespace

std::string DatasetSpec::default_name() const {
  std::string n;
  for (Op op : operators) n += (op == Op::Add ? "add_" : "sub_");
  return n + (size_class == SizeClass::Small ? "small" : "large");
}

void DatasetSpec::validate() const {
  if (operators.empty() || operators.size() > 2) {
    throw_error(ErrorKind::Config, "unsupported operator tuple: need one or two operators");
  }
  if (n_operands != operators.size() + 1) {
    throw_error(ErrorKind::Config,
                fmt::format("n_operands {} does not match {} operator(s)", n_operands, operators.size()));
  }
  if (count == 0) throw_error(ErrorKind::Config, "dataset count must be positive");
}

json DatasetSpec::to_json() const {
  json ops = json::array();
  for (Op op : operators) ops.push_back(op_string(op));
  return {{"name", name.empty() ? default_name() : name},
          {"operators", ops},
          {"size_class", size_class == SizeClass::Small ? "small" : "large"},
          {"n_operands", n_operands},
          {"count", count},
          {"seed", seed}};
}

DatasetSpec DatasetSpec::from_json(const json& j) {
  DatasetSpec s;
  try {
    for (const auto& o : j.at("operators")) s.operators.push_back(parse_op(o.get<std::string>()));
    const std::string sc = j.value("size_class", "large");
    if (sc == "small") {
      s.size_class = SizeClass::Small;
    } else if (sc == "large") {
      s.size_class = SizeClass::Large;
    } else {
      throw_error(ErrorKind::Config, "size_class must be small or large, got '" + sc + "'");
    }
    s.n_operands = j.value("n_operands", s.operators.size() + 1);
    s.count = j.value("count", std::size_t{500});
    s.seed = j.value("seed", std::uint64_t{0});
    s.name = j.value("name", std::string());
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Config, std::string("invalid dataset spec: ") + e.what());
  }
  s.validate();
  if (s.name.empty()) s.name = s.default_name();
  return s;
}

std::int64_t evaluate(const std::vector<std::int64_t>& operands, const std::vector<Op>& operators) {
  if (operands.size() != operators.size() + 1) throw_error(ErrorKind::Input, "operand/operator count mismatch");
  std::int64_t acc = operands[0];
  for (std::size_t i = 0; i < operators.size(); ++i) {
    acc = operators[i] == Op::Add ? acc + operands[i + 1] : acc - operands[i + 1];
  }
  return acc;
}

std::string render_prompt(const std::vector<std::int64_t>& operands, const std::vector<Op>& operators) {
  if (operands.size() != operators.size() + 1) throw_error(ErrorKind::Input, "operand/operator count mismatch");
  std::string s = fmt::format("Please calculate {}", operands[0]);
  for (std::size_t i = 0; i < operators.size(); ++i) {
    s += fmt::format(" {} {}", static_cast<char>(operators[i]), operands[i + 1]);
  }
  return s + " =";
}

std::optional<ArithmeticQuery> make_query(std::vector<std::int64_t> operands, std::vector<Op> operators,
                                          std::int64_t bound, const Tokenizer& tokenizer) {
  for (auto v : operands) {
    if (v < 0 || v > bound || !tokenizer.integer_token(v, true)) return std::nullopt;
  }
  const std::int64_t result = evaluate(operands, operators);
  if (result < 0 || result > bound) return std::nullopt;
  auto gold = tokenizer.integer_token(result, true);
  if (!gold) return std::nullopt;
  ArithmeticQuery q;
  q.prompt = render_prompt(operands, operators);
  q.operands = std::move(operands);
  q.operators = std::move(operators);
  q.gold_result = result;
  q.gold_token = *gold;
  return q;
}

std::uint64_t valid_space_size(const DatasetSpec& spec, const Tokenizer& tokenizer) {
  spec.validate();
  const std::int64_t bound = spec.bound();
  const auto allowed = allowed_values(bound, tokenizer);
  std::vector<std::uint8_t> result_ok(bound + 1);
  for (auto v : allowed) result_ok[v] = 1;
  std::uint64_t n = 0;
  for_each_tuple(allowed, spec.n_operands, [&](const std::vector<std::int64_t>& ops) {
    const std::int64_t r = evaluate(ops, spec.operators);
    if (r >= 0 && r <= bound && result_ok[r]) ++n;
  });
  return n;
}

Dataset generate(const DatasetSpec& spec_in, const Tokenizer& tokenizer) {
  DatasetSpec spec = spec_in;
  spec.validate();
  if (spec.name.empty()) spec.name = spec.default_name();
  const std::int64_t bound = spec.bound();
  const auto allowed = allowed_values(bound, tokenizer);
  const std::uint64_t space = valid_space_size(spec, tokenizer);
  if (spec.count > space) {
    throw_error(ErrorKind::Config, fmt::format("dataset '{}' asks for {} queries but only {} valid queries exist",
                                               spec.name, spec.count, space));
  }

  Prng rng(spec.seed);
  std::vector<std::vector<std::int64_t>> picked;
  picked.reserve(spec.count);
  std::uint64_t raw = 1;
  for (std::size_t i = 0; i < spec.n_operands; ++i) raw *= allowed.size();

  if (raw <= kEnumerateLimit) {
    std::vector<std::vector<std::int64_t>> pool;
    pool.reserve(space);
    for_each_tuple(allowed, spec.n_operands, [&](const std::vector<std::int64_t>& ops) {
      if (make_query(ops, spec.operators, bound, tokenizer)) pool.push_back(ops);
    });
    // Partial Fisher-Yates: the first `count` slots become the sample.
    for (std::size_t i = 0; i < spec.count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      picked.push_back(pool[i]);
    }
  } else {
    std::unordered_set<std::uint64_t> seen;
    std::vector<std::int64_t> ops(spec.n_operands);
    while (picked.size() < spec.count) {
      for (auto& v : ops) v = allowed[rng.below(allowed.size())];
      if (!make_query(ops, spec.operators, bound, tokenizer)) continue;
      if (seen.insert(pack(ops)).second) picked.push_back(ops);
    }
  }

  Dataset d;
  d.spec = spec;
  d.vocab_hash = tokenizer.vocab_hash();
  d.queries.reserve(picked.size());
  for (std::size_t i = 0; i < picked.size(); ++i) {
    ArithmeticQuery q = *make_query(picked[i], spec.operators, bound, tokenizer);
    q.id = fmt::format("{}-{:05d}", spec.name, i);
    d.queries.push_back(std::move(q));
  }
  return d;
}

std::vector<std::string> revalidate(const ArithmeticQuery& q, const DatasetSpec& spec, const Tokenizer& tokenizer) {
  std::vector<std::string> bad;
  if (q.operands.size() != spec.n_operands) bad.push_back("operand count");
  if (q.operators != spec.operators) bad.push_back("operator tuple");
  if (!bad.empty()) return bad;
  for (auto v : q.operands) {
    if (v < 0 || v > spec.bound()) bad.push_back(fmt::format("operand {} out of bounds", v));
    if (v >= 0 && !tokenizer.integer_token(v, true)) bad.push_back(fmt::format("operand {} not a single token", v));
  }
  if (evaluate(q.operands, q.operators) != q.gold_result) bad.push_back("gold_result");
  if (q.gold_result < 0 || q.gold_result > spec.bound()) bad.push_back("result out of bounds");
  if (q.gold_result >= 0 && tokenizer.integer_token(q.gold_result, true) != std::optional<TokenId>(q.gold_token)) {
    bad.push_back("gold_token");
  }
  if (q.prompt != render_prompt(q.operands, q.operators)) bad.push_back("prompt");
  return bad;
}

std::string to_jsonl(const Dataset& d) {
  std::string out = json{{"schema", kDatasetSchema}, {"spec", d.spec.to_json()}, {"vocab_sha256", d.vocab_hash}}.dump();
  out += '\n';
  for (const auto& q : d.queries) {
    json ops = json::array();
    for (Op op : q.operators) ops.push_back(op_string(op));
    out += json{{"id", q.id},
                {"operands", q.operands},
                {"operators", ops},
                {"prompt", q.prompt},
                {"gold_result", q.gold_result},
                {"gold_token_id", q.gold_token}}
               .dump();
    out += '\n';
  }
  return out;
}

Dataset from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Dataset d;
  try {
    if (!std::getline(in, line)) throw_error(ErrorKind::Config, "dataset file is empty");
    const json header = json::parse(line);
    if (header.value("schema", "") != kDatasetSchema) {
      throw_error(ErrorKind::Config, "dataset header has unknown schema " + header.value("schema", "<none>"));
    }
    d.spec = DatasetSpec::from_json(header.at("spec"));
    d.vocab_hash = header.value("vocab_sha256", "");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      ArithmeticQuery q;
      q.id = j.at("id").get<std::string>();
      q.operands = j.at("operands").get<std::vector<std::int64_t>>();
      for (const auto& o : j.at("operators")) q.operators.push_back(parse_op(o.get<std::string>()));
      q.prompt = j.at("prompt").get<std::string>();
      q.gold_result = j.at("gold_result").get<std::int64_t>();
      q.gold_token = j.at("gold_token_id").get<TokenId>();
      d.queries.push_back(std::move(q));
    }
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Config, std::string("malformed dataset JSONL: ") + e.what());
  }
  return d;
}

void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_error(ErrorKind::Runtime, "cannot write " + path.string());
  out << to_jsonl(d);
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_error(ErrorKind::Config, "cannot open dataset " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_jsonl(ss.str());
}

std::size_t argmax(const std::vector<float>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

AccuracyResult evaluate_accuracy(const Model& model, const Tokenizer& tokenizer, const Dataset& dataset,
                                 std::size_t workers) {
  if (tokenizer.vocab_size() > model.config().vocab_size) {
    throw_error(ErrorKind::Input, fmt::format("tokenizer vocabulary ({}) exceeds model vocabulary ({})",
                                              tokenizer.vocab_size(), model.config().vocab_size));
  }
  std::vector<std::uint8_t> hit(dataset.queries.size(), 0);
  parallel_for(dataset.queries.size(), workers, [&](std::size_t i) {
    const auto& q = dataset.queries[i];
    const auto tokens = tokenizer.encode(q.prompt);
    const TapRecord rec = forward_with_taps(model, tokens, tokens.size() - 1);
    hit[i] = argmax(rec.final_logits) == static_cast<std::size_t>(q.gold_token);
  });
  AccuracyResult r;
  r.total = hit.size();
  for (auto h : hit) r.correct += h;
  return r;
}

}  // namespace numlens
