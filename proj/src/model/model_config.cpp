// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>

#include <fmt/format.h>

#include "numlens/model.hpp"

namespace numlens {
using nlohmann::json;

std::string_view family_name(Family f) {
  return f == Family::SequentialPreNorm ? "sequential-residual-prelnorm" : "parallel-residual-rotary";
}

std::size_t ModelConfig::rotary_dims() const {
  if (family != Family::ParallelRotary) return 0;
  auto dims = static_cast<std::size_t>(static_cast<double>(d_head) * rotary_fraction);
  return dims - dims % 2;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw_error(ErrorKind::Config, "invalid model config: " + m); };
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (n_heads == 0 || d_head == 0 || n_heads * d_head != d_model) {
    fail(fmt::format("n_heads ({}) x d_head ({}) != d_model ({})", n_heads, d_head, d_model));
  }
  if (d_ff == 0) fail("d_ff must be positive");
  if (max_context == 0) fail("max_context must be positive");
  if (!(layernorm_epsilon > 0.0)) fail("layernorm_epsilon must be positive");
  if (family == Family::ParallelRotary && (rotary_fraction < 0.0 || rotary_fraction > 1.0)) {
    fail("rotary_fraction must lie in [0, 1]");
  }
  if (family == Family::ParallelRotary && !(rotary_base > 0.0)) fail("rotary_base must be positive");
}

namespace {

Activation parse_activation(const std::string& s) {
  if (s == "gelu") return Activation::GeluErf;
  if (s == "gelu_new" || s == "gelu_fast" || s == "gelu_pytorch_tanh") return Activation::GeluTanh;
  throw_error(ErrorKind::Config, "unsupported activation '" + s + "'");
}

std::size_t get_count(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() < 0) {
    throw_error(ErrorKind::Config, fmt::format("model config needs a non-negative integer '{}'", key));
  }
  return j[key].get<std::size_t>();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) && !j[key].is_null() ? j[key].get<T>() : fallback;
}

}  // namespace

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    const std::string type = j.at("model_type").get<std::string>();
    if (type == "gpt2") {
      c.family = Family::SequentialPreNorm;
      c.n_layers = get_count(j, "n_layer");
      c.d_model = get_count(j, "n_embd");
      c.n_heads = get_count(j, "n_head");
      c.vocab_size = get_count(j, "vocab_size");
      c.max_context = get_count(j, "n_positions");
      c.d_ff = j.contains("n_inner") && !j["n_inner"].is_null() ? get_count(j, "n_inner") : 4 * c.d_model;
      c.layernorm_epsilon = get_or(j, "layer_norm_epsilon", 1e-5);
      c.activation = parse_activation(get_or<std::string>(j, "activation_function", "gelu_new"));
      c.tied_lm_head = get_or(j, "tie_word_embeddings", true);
      if (get_or(j, "scale_attn_by_inverse_layer_idx", false) || get_or(j, "reorder_and_upcast_attn", false) ||
          !get_or(j, "scale_attn_weights", true)) {
        throw_error(ErrorKind::Config, "unsupported GPT-2 attention scaling options");
      }
    } else if (type == "gpt_neox") {
      c.family = Family::ParallelRotary;
      c.n_layers = get_count(j, "num_hidden_layers");
      c.d_model = get_count(j, "hidden_size");
      c.n_heads = get_count(j, "num_attention_heads");
      c.vocab_size = get_count(j, "vocab_size");
      c.max_context = get_count(j, "max_position_embeddings");
      c.d_ff = get_count(j, "intermediate_size");
      c.layernorm_epsilon = get_or(j, "layer_norm_eps", 1e-5);
      c.activation = parse_activation(get_or<std::string>(j, "hidden_act", "gelu"));
      c.tied_lm_head = get_or(j, "tie_word_embeddings", false);
      // Older configs carry rotary_pct / rotary_emb_base; newer ones nest rope_parameters.
      if (j.contains("rope_parameters") && j["rope_parameters"].is_object()) {
        const json& rp = j["rope_parameters"];
        c.rotary_fraction = get_or(rp, "partial_rotary_factor", 1.0);
        c.rotary_base = get_or(rp, "rope_theta", 10000.0);
        if (get_or<std::string>(rp, "rope_type", "default") != "default") {
          throw_error(ErrorKind::Config, "only default rotary scaling is supported");
        }
      } else {
        if (j.contains("rope_scaling") && !j["rope_scaling"].is_null()) {
          throw_error(ErrorKind::Config, "only default rotary scaling is supported");
        }
        c.rotary_fraction = get_or(j, "rotary_pct", get_or(j, "partial_rotary_factor", 1.0));
        c.rotary_base = get_or(j, "rotary_emb_base", get_or(j, "rope_theta", 10000.0));
      }
      if (!get_or(j, "use_parallel_residual", true)) {
        throw_error(ErrorKind::Config, "gpt_neox configs without parallel residual are not supported");
      }
      if (!get_or(j, "attention_bias", true)) {
        throw_error(ErrorKind::Config, "gpt_neox configs without attention bias are not supported");
      }
    } else {
      throw_error(ErrorKind::Config, "unsupported model_type '" + type + "'");
    }
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Config, std::string("invalid model config: ") + e.what());
  }
  if (c.n_heads != 0) c.d_head = c.d_model / c.n_heads;
  if (c.n_heads != 0 && c.d_model % c.n_heads != 0) c.d_head = 0;
  c.validate();
  return c;
}

ModelConfig ModelConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_error(ErrorKind::Config, "cannot open model config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Config, "cannot parse model config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

json ModelConfig::to_json() const {
  const char* act = activation == Activation::GeluErf ? "gelu" : "gelu_new";
  if (family == Family::SequentialPreNorm) {
    return {{"model_type", "gpt2"},       {"n_layer", n_layers},          {"n_embd", d_model},
            {"n_head", n_heads},          {"vocab_size", vocab_size},     {"n_positions", max_context},
            {"n_inner", d_ff},            {"layer_norm_epsilon", layernorm_epsilon},
            {"activation_function", act}, {"tie_word_embeddings", tied_lm_head}};
  }
  return {{"model_type", "gpt_neox"},
          {"num_hidden_layers", n_layers},
          {"hidden_size", d_model},
          {"num_attention_heads", n_heads},
          {"vocab_size", vocab_size},
          {"max_position_embeddings", max_context},
          {"intermediate_size", d_ff},
          {"layer_norm_eps", layernorm_epsilon},
          {"hidden_act", act},
          {"rotary_pct", rotary_fraction},
          {"rotary_emb_base", rotary_base},
          {"use_parallel_residual", true},
          {"tie_word_embeddings", tied_lm_head}};
}

}  // namespace numlens
