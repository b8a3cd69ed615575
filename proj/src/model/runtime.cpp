// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "numlens/runtime.hpp"

#include <cmath>
#include <optional>

#include <fmt/format.h>

namespace numlens {

std::string_view site_name(SiteKind s) { return s == SiteKind::PostAttention ? "post_att" : "post_mlp"; }

SiteKind parse_site(std::string_view s) {
  if (s == "post_att") return SiteKind::PostAttention;
  if (s == "post_mlp") return SiteKind::PostMlp;
  throw_error(ErrorKind::Config, fmt::format("unknown site '{}' (expected post_att or post_mlp)", s));
}

std::vector<TapSite> all_sites(std::size_t n_layers) {
  std::vector<TapSite> out;
  out.reserve(2 * n_layers);
  for (std::size_t l = 1; l <= n_layers; ++l) {
    out.push_back({l, SiteKind::PostAttention});
    out.push_back({l, SiteKind::PostMlp});
  }
  return out;
}

const std::vector<float>& TapRecord::tap(TapSite s) const {
  if (s.layer < 1 || s.layer > n_layers()) throw_error(ErrorKind::Input, fmt::format("no tap at layer {}", s.layer));
  return s.site == SiteKind::PostAttention ? post_attention[s.layer - 1] : post_mlp[s.layer - 1];
}

namespace {

using kernels::KernelSet;

void layer_norm(const LayerNormParams& p, const float* x, float* y, std::size_t d, float eps) {
  float mean = 0.0f;
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<float>(d);
  float var = 0.0f;
  for (std::size_t i = 0; i < d; ++i) {
    const float c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<float>(d);
  const float inv = 1.0f / std::sqrt(var + eps);
  for (std::size_t i = 0; i < d; ++i) y[i] = (x[i] - mean) * inv * p.gain[i] + p.bias[i];
}

float gelu(float x, Activation a) {
  if (a == Activation::GeluErf) return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f));
  constexpr float k = 0.79788456080286536f;  // sqrt(2/pi)
  return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

// Y[t] = W X[t] + b for T row vectors. Row-outer so each weight row is streamed once.
void linear(const KernelSet& k, const Linear& l, const std::vector<float>& x, std::vector<float>& y, std::size_t n) {
  y.assign(n * l.rows, 0.0f);
  for (std::size_t r = 0; r < l.rows; ++r) {
    const float* w = l.weight.data() + r * l.cols;
    const float b = l.bias.empty() ? 0.0f : l.bias[r];
    for (std::size_t t = 0; t < n; ++t) y[t * l.rows + r] = b + k.dot(w, x.data() + t * l.cols, l.cols);
  }
}

// rotate_half rotary on the first rd dimensions of one head vector.
void apply_rotary(float* v, std::span<const float> inv_freq, std::size_t pos) {
  const std::size_t half = inv_freq.size();
  for (std::size_t i = 0; i < half; ++i) {
    const float angle = static_cast<float>(pos) * inv_freq[i];
    const float c = std::cos(angle);
    const float s = std::sin(angle);
    const float x1 = v[i];
    const float x2 = v[i + half];
    v[i] = x1 * c - x2 * s;
    v[i + half] = x2 * c + x1 * s;
  }
}

// Causal multi-head attention over T positions; returns the attention module
// output [T][d] (after the output projection).
void attention(const KernelSet& k, const Model& m, const Block& b, const std::vector<float>& normed,
               std::vector<float>& out, std::size_t n) {
  const ModelConfig& c = m.config();
  const std::size_t d = c.d_model;
  const std::size_t dh = c.d_head;
  std::vector<float> qkv;
  linear(k, b.qkv, normed, qkv, n);
  if (c.family == Family::ParallelRotary && !m.rotary_inv_freq().empty()) {
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        apply_rotary(qkv.data() + t * 3 * d + h * dh, m.rotary_inv_freq(), t);
        apply_rotary(qkv.data() + t * 3 * d + d + h * dh, m.rotary_inv_freq(), t);
      }
    }
  }
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<float> ctx(n * d, 0.0f);
  std::vector<float> scores(n);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const float* q = qkv.data() + t * 3 * d + h * dh;
      float mx = -INFINITY;
      for (std::size_t s = 0; s <= t; ++s) {
        scores[s] = k.dot(q, qkv.data() + s * 3 * d + d + h * dh, dh) * scale;
        mx = std::max(mx, scores[s]);
      }
      float sum = 0.0f;
      for (std::size_t s = 0; s <= t; ++s) {
        scores[s] = std::exp(scores[s] - mx);
        sum += scores[s];
      }
      float* o = ctx.data() + t * d + h * dh;
      for (std::size_t s = 0; s <= t; ++s) k.axpy(scores[s] / sum, qkv.data() + s * 3 * d + 2 * d + h * dh, o, dh);
    }
  }
  linear(k, b.attn_out, ctx, out, n);
}

void mlp(const KernelSet& k, const ModelConfig& c, const Block& b, const std::vector<float>& normed,
         std::vector<float>& out, std::size_t n) {
  std::vector<float> hidden;
  linear(k, b.mlp_up, normed, hidden, n);
  for (float& v : hidden) v = gelu(v, c.activation);
  linear(k, b.mlp_down, hidden, out, n);
}

void check_inputs(const Model& m, std::span<const TokenId> tokens, std::size_t position) {
  if (tokens.empty()) throw_error(ErrorKind::Input, "empty token sequence");
  if (tokens.size() > m.config().max_context) {
    throw_error(ErrorKind::Input, fmt::format("context overflow: {} tokens exceed max_context {}", tokens.size(),
                                              m.config().max_context));
  }
  if (position >= tokens.size()) {
    throw_error(ErrorKind::Input, fmt::format("position {} out of range for {} tokens", position, tokens.size()));
  }
}

TapRecord run(const Model& m, std::span<const TokenId> tokens, std::size_t position, const AttentionPatch* patch,
              const KernelSet* ks) {
  check_inputs(m, tokens, position);
  const KernelSet& k = ks ? *ks : kernels::active();
  const ModelConfig& c = m.config();
  const std::size_t d = c.d_model;
  const std::size_t n = position + 1;
  const float eps = static_cast<float>(c.layernorm_epsilon);

  TapRecord rec;
  rec.prompt_tokens.assign(tokens.begin(), tokens.end());
  rec.position = position;

  std::vector<float> x(n * d);
  for (std::size_t t = 0; t < n; ++t) {
    auto e = m.token_embedding(tokens[t]);
    std::copy(e.begin(), e.end(), x.begin() + t * d);
    if (c.family == Family::SequentialPreNorm) {
      auto p = m.position_embedding(t);
      for (std::size_t i = 0; i < d; ++i) x[t * d + i] += p[i];
    }
  }
  rec.embedding.assign(x.begin() + position * d, x.end());

  auto at_pos = [&](const std::vector<float>& v) {
    return std::vector<float>(v.begin() + position * d, v.begin() + (position + 1) * d);
  };

  std::vector<float> normed(n * d), attn, ffn;
  for (std::size_t layer = 1; layer <= c.n_layers; ++layer) {
    const Block& b = m.block(layer);
    for (std::size_t t = 0; t < n; ++t) layer_norm(b.attn_norm, &x[t * d], &normed[t * d], d, eps);
    attention(k, m, b, normed, attn, n);
    if (patch && patch->layer == layer) {
      std::copy(patch->replacement.begin(), patch->replacement.end(), attn.begin() + position * d);
    }
    rec.attention_output.push_back(at_pos(attn));

    if (c.family == Family::SequentialPreNorm) {
      for (std::size_t i = 0; i < n * d; ++i) x[i] += attn[i];
      rec.post_attention.push_back(at_pos(x));
      for (std::size_t t = 0; t < n; ++t) layer_norm(b.mlp_norm, &x[t * d], &normed[t * d], d, eps);
      mlp(k, c, b, normed, ffn, n);
      for (std::size_t i = 0; i < n * d; ++i) x[i] += ffn[i];
    } else {
      // Both modules read the block input; attention is added first.
      for (std::size_t t = 0; t < n; ++t) layer_norm(b.mlp_norm, &x[t * d], &normed[t * d], d, eps);
      mlp(k, c, b, normed, ffn, n);
      for (std::size_t i = 0; i < n * d; ++i) x[i] += attn[i];
      rec.post_attention.push_back(at_pos(x));
      for (std::size_t i = 0; i < n * d; ++i) x[i] += ffn[i];
    }
    rec.mlp_output.push_back(at_pos(ffn));
    rec.post_mlp.push_back(at_pos(x));
  }
  rec.final_logits = project_to_vocab(m, rec.post_mlp.back(), &k);
  return rec;
}

}  // namespace

std::vector<float> apply_final_norm(const Model& model, std::span<const float> residual) {
  const std::size_t d = model.config().d_model;
  if (residual.size() != d) {
    throw_error(ErrorKind::Input, fmt::format("residual has length {}, expected {}", residual.size(), d));
  }
  std::vector<float> y(d);
  layer_norm(model.final_norm(), residual.data(), y.data(), d, static_cast<float>(model.config().layernorm_epsilon));
  return y;
}

std::vector<float> project_to_vocab(const Model& model, std::span<const float> residual,
                                    const kernels::KernelSet* ks) {
  const KernelSet& k = ks ? *ks : kernels::active();
  const std::vector<float> normed = apply_final_norm(model, residual);
  const Linear& head = model.lm_head();
  std::vector<float> logits(head.rows);
  k.matvec(head.weight.data(), normed.data(), nullptr, logits.data(), head.rows, head.cols);
  return logits;
}

TapRecord forward_with_taps(const Model& model, std::span<const TokenId> tokens, std::size_t position,
                            const kernels::KernelSet* kernels) {
  return run(model, tokens, position, nullptr, kernels);
}

TapRecord forward_with_patch(const Model& model, std::span<const TokenId> tokens, std::size_t position,
                             const AttentionPatch& patch, const kernels::KernelSet* kernels) {
  const ModelConfig& c = model.config();
  if (patch.layer < 1 || patch.layer > c.n_layers) {
    throw_error(ErrorKind::Input, fmt::format("patch layer {} out of range [1, {}]", patch.layer, c.n_layers));
  }
  if (patch.replacement.size() != c.d_model) {
    throw_error(ErrorKind::Input,
                fmt::format("patch vector has length {}, expected {}", patch.replacement.size(), c.d_model));
  }
  for (float v : patch.replacement) {
    if (!std::isfinite(v)) throw_error(ErrorKind::Input, "patch vector is not finite");
  }
  return run(model, tokens, position, &patch, kernels);
}

}  // namespace numlens
