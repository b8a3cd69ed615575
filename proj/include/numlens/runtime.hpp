// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "numlens/kernels.hpp"
#include "numlens/model.hpp"

namespace numlens {

enum class SiteKind { PostAttention, PostMlp };

std::string_view site_name(SiteKind s);  // "post_att" | "post_mlp"
SiteKind parse_site(std::string_view s);

struct TapSite {
  std::size_t layer = 1;  // 1-based
  SiteKind site = SiteKind::PostAttention;
  auto operator<=>(const TapSite&) const = default;
};

/// All 2 * n_layers tap sites, ordered (1, att), (1, mlp), (2, att), ...
std::vector<TapSite> all_sites(std::size_t n_layers);

/// Residual-stream captures at one token position. Per-layer vectors are
/// indexed layer - 1.
struct TapRecord {
  std::vector<TokenId> prompt_tokens;
  std::size_t position = 0;
  std::vector<float> embedding;                      // residual before block 1
  std::vector<std::vector<float>> post_attention;    // post-ATT taps
  std::vector<std::vector<float>> post_mlp;          // post-MLP taps
  std::vector<std::vector<float>> attention_output;  // attention module outputs (after any patch)
  std::vector<std::vector<float>> mlp_output;        // MLP module outputs
  std::vector<float> final_logits;                   // next-token logits at `position`

  std::size_t n_layers() const { return post_mlp.size(); }
  const std::vector<float>& tap(TapSite s) const;
};

/// Replaces the attention module output of `layer` at the tapped position
/// before it is added to the residual stream.
struct AttentionPatch {
  std::size_t layer = 1;
  std::vector<float> replacement;
};

/// Runs tokens[0..position] and captures taps at `position`. Later tokens cannot
/// influence that position under the causal mask, so they are not computed.
/// `kernels` defaults to kernels::active().
TapRecord forward_with_taps(const Model& model, std::span<const TokenId> tokens, std::size_t position,
                            const kernels::KernelSet* kernels = nullptr);

TapRecord forward_with_patch(const Model& model, std::span<const TokenId> tokens, std::size_t position,
                             const AttentionPatch& patch, const kernels::KernelSet* kernels = nullptr);

/// lm_head(final_norm(residual)) as float logits.
std::vector<float> project_to_vocab(const Model& model, std::span<const float> residual,
                                    const kernels::KernelSet* kernels = nullptr);

/// final_norm(residual).
std::vector<float> apply_final_norm(const Model& model, std::span<const float> residual);

}  // namespace numlens
