// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "numlens/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>

namespace numlens {
namespace {

// Box-Muller over the raw 64-bit stream; std::normal_distribution is not
// specified bit-for-bit across standard libraries.
class Normal {
 public:
  explicit Normal(std::uint64_t seed) : rng_(seed) {}
  float operator()() {
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2));
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

std::map<std::string, HostTensor> synthetic_weights(const ModelConfig& c, std::uint64_t seed, float scale) {
  c.validate();
  Normal normal(seed);
  std::map<std::string, HostTensor> out;
  const std::size_t d = c.d_model;

  auto matrix = [&](const std::string& name, Shape shape, std::size_t fan_in) {
    HostTensor t{shape, std::vector<float>(element_count(shape))};
    const float s = scale / std::sqrt(static_cast<float>(fan_in));
    for (float& v : t.data) v = s * normal();
    out[name] = std::move(t);
  };
  auto vec = [&](const std::string& name, std::size_t n, float base, float spread) {
    HostTensor t{{n}, std::vector<float>(n)};
    for (float& v : t.data) v = base + spread * normal();
    out[name] = std::move(t);
  };
  auto norm = [&](const std::string& base) {
    vec(base + ".weight", d, 1.0f, 0.2f);
    vec(base + ".bias", d, 0.0f, 0.1f);
  };

  if (c.family == Family::SequentialPreNorm) {
    matrix("wte.weight", {c.vocab_size, d}, d);
    matrix("wpe.weight", {c.max_context, d}, d);
    for (std::size_t i = 0; i < c.n_layers; ++i) {
      const std::string p = fmt::format("h.{}.", i);
      norm(p + "ln_1");
      matrix(p + "attn.c_attn.weight", {d, 3 * d}, d);
      vec(p + "attn.c_attn.bias", 3 * d, 0.0f, 0.1f);
      matrix(p + "attn.c_proj.weight", {d, d}, d);
      vec(p + "attn.c_proj.bias", d, 0.0f, 0.1f);
      norm(p + "ln_2");
      matrix(p + "mlp.c_fc.weight", {d, c.d_ff}, d);
      vec(p + "mlp.c_fc.bias", c.d_ff, 0.0f, 0.1f);
      matrix(p + "mlp.c_proj.weight", {c.d_ff, d}, c.d_ff);
      vec(p + "mlp.c_proj.bias", d, 0.0f, 0.1f);
    }
    norm("ln_f");
    if (!c.tied_lm_head) matrix("lm_head.weight", {c.vocab_size, d}, d);
  } else {
    matrix("gpt_neox.embed_in.weight", {c.vocab_size, d}, d);
    for (std::size_t i = 0; i < c.n_layers; ++i) {
      const std::string p = fmt::format("gpt_neox.layers.{}.", i);
      norm(p + "input_layernorm");
      norm(p + "post_attention_layernorm");
      matrix(p + "attention.query_key_value.weight", {3 * d, d}, d);
      vec(p + "attention.query_key_value.bias", 3 * d, 0.0f, 0.1f);
      matrix(p + "attention.dense.weight", {d, d}, d);
      vec(p + "attention.dense.bias", d, 0.0f, 0.1f);
      matrix(p + "mlp.dense_h_to_4h.weight", {c.d_ff, d}, d);
      vec(p + "mlp.dense_h_to_4h.bias", c.d_ff, 0.0f, 0.1f);
      matrix(p + "mlp.dense_4h_to_h.weight", {d, c.d_ff}, c.d_ff);
      vec(p + "mlp.dense_4h_to_h.bias", d, 0.0f, 0.1f);
    }
    norm("gpt_neox.final_layer_norm");
    if (!c.tied_lm_head) matrix("embed_out.weight", {c.vocab_size, d}, d);
  }
  return out;
}

void write_synthetic_checkpoint(const std::filesystem::path& dir, const ModelConfig& config, std::uint64_t seed,
                                DType storage, float scale) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream cfg(dir / "config.json");
    if (!cfg) throw_error(ErrorKind::Runtime, "cannot write " + (dir / "config.json").string());
    cfg << config.to_json().dump(2) << '\n';
  }
  write_safetensors(dir / "model.safetensors", synthetic_weights(config, seed, scale), storage);
}

}  // namespace numlens
