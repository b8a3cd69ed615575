// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "numlens/error.hpp"
#include "numlens/safetensors.hpp"

namespace numlens {

/// Residual wiring of a decoder block.
enum class Family {
  /// x += attn(ln1(x)); x += mlp(ln2(x)); learned absolute positions (GPT-2).
  SequentialPreNorm,
  /// x += attn(ln1(x)) + mlp(ln2(x)); rotary positions on a fraction of each head (GPT-NeoX).
  ParallelRotary,
};

enum class Activation { GeluErf, GeluTanh };

std::string_view family_name(Family f);

struct ModelConfig {
  Family family = Family::SequentialPreNorm;
  std::size_t n_layers = 0;
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  std::size_t d_head = 0;
  std::size_t d_ff = 0;
  std::size_t vocab_size = 0;
  std::size_t max_context = 0;
  double rotary_fraction = 0.0;  // parallel family only
  double rotary_base = 10000.0;
  double layernorm_epsilon = 1e-5;
  Activation activation = Activation::GeluTanh;
  bool tied_lm_head = true;

  /// Rotary dimensions per head (even); 0 for the sequential family.
  std::size_t rotary_dims() const;

  /// Throws Error(Config) when an invariant fails (n_heads * d_head == d_model, ...).
  void validate() const;

  /// Parses a HF-style config.json ("model_type": "gpt2" | "gpt_neox").
  static ModelConfig from_json(const nlohmann::json& j);
  static ModelConfig from_file(const std::filesystem::path& path);
  /// HF-style config.json that from_json reads back to the same config.
  nlohmann::json to_json() const;
};

struct LayerNormParams {
  std::vector<float> gain;
  std::vector<float> bias;
};

/// Dense layer, row-major weight [rows = out][cols = in].
struct Linear {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> weight;
  std::vector<float> bias;  // empty if the layer has none

  std::span<const float> row(std::size_t r) const { return {weight.data() + r * cols, cols}; }
};

/// One decoder block. qkv rows are laid out [q | k | v], each [n_heads][d_head],
/// whatever the checkpoint's native layout.
struct Block {
  LayerNormParams attn_norm;
  LayerNormParams mlp_norm;
  Linear qkv;
  Linear attn_out;
  Linear mlp_up;
  Linear mlp_down;
};

/// Immutable decoder-only transformer. Safe to share across threads.
class Model {
 public:
  Model(ModelConfig config, const WeightSource& weights);

  const ModelConfig& config() const { return config_; }
  std::span<const float> token_embedding(TokenId id) const;
  /// Learned absolute position row (sequential family only).
  std::span<const float> position_embedding(std::size_t pos) const;
  /// Layers are 1-based, matching tap-site numbering.
  const Block& block(std::size_t layer) const { return blocks_.at(layer - 1); }
  const LayerNormParams& final_norm() const { return final_norm_; }
  /// [vocab_size][d_model]
  const Linear& lm_head() const { return lm_head_; }
  /// Rotary inverse frequencies, rotary_dims()/2 entries.
  std::span<const float> rotary_inv_freq() const { return inv_freq_; }

 private:
  ModelConfig config_;
  std::vector<float> token_embeddings_;
  std::vector<float> position_embeddings_;
  std::vector<Block> blocks_;
  LayerNormParams final_norm_;
  Linear lm_head_;
  std::vector<float> inv_freq_;
};

/// Loads config.json + a safetensors checkpoint. Errors (ErrorKind::Load):
/// "missing weight <name>", "shape mismatch <name> expected [..] got [..]",
/// "corrupt tensor <name>".
Model load_model(const std::filesystem::path& config_path, const std::filesystem::path& weights_path);

/// Tensor names a checkpoint of this family must provide.
std::vector<std::string> required_tensor_names(const ModelConfig& config);

}  // namespace numlens
