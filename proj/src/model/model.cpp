// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <fmt/format.h>

#include "numlens/model.hpp"

namespace numlens {
namespace {

// Resolves checkpoint tensor names for one family and reads them with shape and
// finiteness checks.
class TensorReader {
 public:
  TensorReader(const WeightSource& src, std::string prefix) : src_(src), prefix_(std::move(prefix)) {}

  std::vector<float> read(const std::string& name, const Shape& expected) const {
    const std::string full = prefix_ + name;
    auto shape = src_.shape(full);
    if (!shape) throw_error(ErrorKind::Load, "missing weight " + full);
    if (*shape != expected) {
      throw_error(ErrorKind::Load, fmt::format("shape mismatch {} expected {} got {}", full, shape_string(expected),
                                               shape_string(*shape)));
    }
    std::vector<float> v = src_.read(full);
    for (float f : v) {
      if (!std::isfinite(f)) throw_error(ErrorKind::Load, "corrupt tensor " + full + ": non-finite value");
    }
    return v;
  }

  bool has(const std::string& name) const { return src_.shape(prefix_ + name).has_value(); }

 private:
  const WeightSource& src_;
  std::string prefix_;
};

// [in][out] (Conv1D storage) to [out][in].
std::vector<float> transpose(const std::vector<float>& w, std::size_t in, std::size_t out) {
  std::vector<float> t(w.size());
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t o = 0; o < out; ++o) t[o * in + i] = w[i * out + o];
  }
  return t;
}

LayerNormParams read_norm(const TensorReader& r, const std::string& base, std::size_t d) {
  return {r.read(base + ".weight", {d}), r.read(base + ".bias", {d})};
}

Linear conv1d(const TensorReader& r, const std::string& base, std::size_t in, std::size_t out) {
  Linear l;
  l.rows = out;
  l.cols = in;
  l.weight = transpose(r.read(base + ".weight", {in, out}), in, out);
  l.bias = r.read(base + ".bias", {out});
  return l;
}

Linear dense(const TensorReader& r, const std::string& base, std::size_t in, std::size_t out) {
  Linear l;
  l.rows = out;
  l.cols = in;
  l.weight = r.read(base + ".weight", {out, in});
  l.bias = r.read(base + ".bias", {out});
  return l;
}

// NeoX stores query_key_value rows per head as [q | k | v]; regroup to [all q | all k | all v].
void regroup_qkv(Linear& qkv, std::size_t n_heads, std::size_t d_head) {
  const std::size_t d = n_heads * d_head;
  std::vector<float> w(qkv.weight.size());
  std::vector<float> b(qkv.bias.size());
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t part = 0; part < 3; ++part) {
      for (std::size_t i = 0; i < d_head; ++i) {
        const std::size_t src = (h * 3 + part) * d_head + i;
        const std::size_t dst = part * d + h * d_head + i;
        std::copy_n(qkv.weight.begin() + src * qkv.cols, qkv.cols, w.begin() + dst * qkv.cols);
        b[dst] = qkv.bias[src];
      }
    }
  }
  qkv.weight = std::move(w);
  qkv.bias = std::move(b);
}

std::string gpt2_prefix(const WeightSource& src) {
  return src.shape("transformer.wte.weight") ? "transformer." : "";
}

}  // namespace

std::vector<std::string> required_tensor_names(const ModelConfig& c) {
  std::vector<std::string> names;
  auto add_pair = [&](const std::string& base) {
    names.push_back(base + ".weight");
    names.push_back(base + ".bias");
  };
  if (c.family == Family::SequentialPreNorm) {
    names = {"wte.weight", "wpe.weight"};
    for (std::size_t i = 0; i < c.n_layers; ++i) {
      const std::string p = fmt::format("h.{}.", i);
      for (const char* m : {"ln_1", "attn.c_attn", "attn.c_proj", "ln_2", "mlp.c_fc", "mlp.c_proj"}) add_pair(p + m);
    }
    add_pair("ln_f");
    if (!c.tied_lm_head) names.push_back("lm_head.weight");
  } else {
    names = {"gpt_neox.embed_in.weight"};
    for (std::size_t i = 0; i < c.n_layers; ++i) {
      const std::string p = fmt::format("gpt_neox.layers.{}.", i);
      for (const char* m : {"input_layernorm", "post_attention_layernorm", "attention.query_key_value",
                            "attention.dense", "mlp.dense_h_to_4h", "mlp.dense_4h_to_h"}) {
        add_pair(p + m);
      }
    }
    add_pair("gpt_neox.final_layer_norm");
    if (!c.tied_lm_head) names.push_back("embed_out.weight");
  }
  return names;
}

Model::Model(ModelConfig config, const WeightSource& weights) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  const std::size_t d = c.d_model;
  blocks_.resize(c.n_layers);
  lm_head_.rows = c.vocab_size;
  lm_head_.cols = d;

  if (c.family == Family::SequentialPreNorm) {
    const std::string prefix = gpt2_prefix(weights);
    TensorReader r(weights, prefix);
    token_embeddings_ = r.read("wte.weight", {c.vocab_size, d});
    position_embeddings_ = r.read("wpe.weight", {c.max_context, d});
    for (std::size_t i = 0; i < c.n_layers; ++i) {
      const std::string p = fmt::format("h.{}.", i);
      Block& b = blocks_[i];
      b.attn_norm = read_norm(r, p + "ln_1", d);
      b.qkv = conv1d(r, p + "attn.c_attn", d, 3 * d);
      b.attn_out = conv1d(r, p + "attn.c_proj", d, d);
      b.mlp_norm = read_norm(r, p + "ln_2", d);
      b.mlp_up = conv1d(r, p + "mlp.c_fc", d, c.d_ff);
      b.mlp_down = conv1d(r, p + "mlp.c_proj", c.d_ff, d);
    }
    final_norm_ = read_norm(r, "ln_f", d);
    if (c.tied_lm_head) {
      lm_head_.weight = token_embeddings_;
    } else {
      // lm_head.weight never carries the "transformer." prefix.
      TensorReader top(weights, "");
      lm_head_.weight = top.read("lm_head.weight", {c.vocab_size, d});
    }
  } else {
    TensorReader r(weights, "");
    token_embeddings_ = r.read("gpt_neox.embed_in.weight", {c.vocab_size, d});
    for (std::size_t i = 0; i < c.n_layers; ++i) {
      const std::string p = fmt::format("gpt_neox.layers.{}.", i);
      Block& b = blocks_[i];
      b.attn_norm = read_norm(r, p + "input_layernorm", d);
      b.mlp_norm = read_norm(r, p + "post_attention_layernorm", d);
      b.qkv = dense(r, p + "attention.query_key_value", d, 3 * d);
      regroup_qkv(b.qkv, c.n_heads, c.d_head);
      b.attn_out = dense(r, p + "attention.dense", d, d);
      b.mlp_up = dense(r, p + "mlp.dense_h_to_4h", d, c.d_ff);
      b.mlp_down = dense(r, p + "mlp.dense_4h_to_h", c.d_ff, d);
    }
    final_norm_ = read_norm(r, "gpt_neox.final_layer_norm", d);
    lm_head_.weight = c.tied_lm_head ? token_embeddings_ : r.read("embed_out.weight", {c.vocab_size, d});

    const std::size_t rd = c.rotary_dims();
    inv_freq_.resize(rd / 2);
    for (std::size_t i = 0; i < rd / 2; ++i) {
      inv_freq_[i] = static_cast<float>(
          1.0 / std::pow(c.rotary_base, static_cast<double>(2 * i) / static_cast<double>(rd)));
    }
  }
}

std::span<const float> Model::token_embedding(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
    throw_error(ErrorKind::Input, fmt::format("token id {} outside vocabulary of {}", id, config_.vocab_size));
  }
  return {token_embeddings_.data() + static_cast<std::size_t>(id) * config_.d_model, config_.d_model};
}

std::span<const float> Model::position_embedding(std::size_t pos) const {
  if (position_embeddings_.empty() || pos >= config_.max_context) {
    throw_error(ErrorKind::Input, fmt::format("no position embedding for position {}", pos));
  }
  return {position_embeddings_.data() + pos * config_.d_model, config_.d_model};
}

Model load_model(const std::filesystem::path& config_path, const std::filesystem::path& weights_path) {
  ModelConfig config = ModelConfig::from_file(config_path);
  auto weights = open_weights(weights_path);
  return Model(std::move(config), *weights);
}

}  // namespace numlens
