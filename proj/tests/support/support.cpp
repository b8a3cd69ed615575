// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace testsupport {
namespace fs = std::filesystem;
using nlohmann::json;

fs::path fixture_dir() { return NUMLENS_FIXTURE_DIR; }
fs::path data_dir() { return NUMLENS_DATA_DIR; }
fs::path cli_path() { return NUMLENS_CLI; }

json load_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return json::parse(in);
}

TempDir::TempDir() {
  std::random_device rd;
  for (;;) {
    path_ = fs::temp_directory_path() / ("numlens-test-" + std::to_string(rd()));
    if (fs::create_directory(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

numlens::ModelConfig tiny_config(numlens::Family family) {
  numlens::ModelConfig c;
  c.family = family;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_head = 4;
  c.d_ff = 32;
  c.vocab_size = 16;
  c.max_context = 16;
  if (family == numlens::Family::ParallelRotary) {
    c.rotary_fraction = 0.5;
    c.activation = numlens::Activation::GeluErf;
    c.tied_lm_head = false;
  }
  return c;
}

const std::vector<double>& RawTensors::at(const std::string& name) const {
  auto it = data.find(name);
  if (it == data.end()) throw std::runtime_error("reference: missing tensor " + name);
  return it->second;
}

RawTensors read_raw_safetensors(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 8);
  std::string header(n, '\0');
  in.read(header.data(), static_cast<std::streamsize>(n));
  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  RawTensors out;
  const json parsed = json::parse(header);
  for (const auto& [name, e] : parsed.items()) {
    if (name == "__metadata__") continue;
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    const auto begin = e.at("data_offsets")[0].get<std::size_t>();
    const auto end = e.at("data_offsets")[1].get<std::size_t>();
    const std::string dtype = e.at("dtype");
    std::vector<double> v;
    if (dtype == "F32") {
      for (std::size_t o = begin; o < end; o += 4) {
        float f;
        std::memcpy(&f, payload.data() + o, 4);
        v.push_back(f);
      }
    } else if (dtype == "F16") {
      for (std::size_t o = begin; o < end; o += 2) {
        std::uint16_t h;
        std::memcpy(&h, payload.data() + o, 2);
        const int exp = (h >> 10) & 0x1f;
        const int mant = h & 0x3ff;
        double val = exp == 0 ? std::ldexp(mant, -24) : std::ldexp(1024 + mant, exp - 25);
        v.push_back((h & 0x8000) ? -val : val);
      }
    } else {
      throw std::runtime_error("reference reader: unsupported dtype " + dtype);
    }
    out.shapes[name] = shape;
    out.data[name] = std::move(v);
  }
  return out;
}

RawTensors raw_from_host(const std::map<std::string, numlens::HostTensor>& tensors) {
  RawTensors out;
  for (const auto& [name, t] : tensors) {
    out.shapes[name] = t.shape;
    out.data[name] = std::vector<double>(t.data.begin(), t.data.end());
  }
  return out;
}

namespace {

using Vec = std::vector<double>;

struct Cfg {
  bool gpt2;
  std::size_t layers, d, heads, dh, vocab;
  double eps;
  std::size_t rd = 0;
  double base = 10000.0;
  bool gelu_erf = false;
  bool tied = true;
  std::string prefix;
};

Cfg parse_cfg(const json& j, const RawTensors& w) {
  Cfg c{};
  c.gpt2 = j["model_type"] == "gpt2";
  if (c.gpt2) {
    c.layers = j["n_layer"];
    c.d = j["n_embd"];
    c.heads = j["n_head"];
    c.vocab = j["vocab_size"];
    c.eps = j.value("layer_norm_epsilon", 1e-5);
    c.gelu_erf = j.value("activation_function", "gelu_new") == "gelu";
    c.tied = j.value("tie_word_embeddings", true);
    c.prefix = w.data.count("transformer.wte.weight") ? "transformer." : "";
  } else {
    c.layers = j["num_hidden_layers"];
    c.d = j["hidden_size"];
    c.heads = j["num_attention_heads"];
    c.vocab = j["vocab_size"];
    c.eps = j.value("layer_norm_eps", 1e-5);
    c.gelu_erf = j.value("hidden_act", "gelu") == "gelu";
    c.tied = j.value("tie_word_embeddings", false);
    double pct = j.contains("rope_parameters") ? j["rope_parameters"].value("partial_rotary_factor", 1.0)
                                               : j.value("rotary_pct", 1.0);
    c.base = j.contains("rope_parameters") ? j["rope_parameters"].value("rope_theta", 10000.0)
                                           : j.value("rotary_emb_base", 10000.0);
    c.dh = c.d / c.heads;
    c.rd = static_cast<std::size_t>(static_cast<double>(c.dh) * pct);
  }
  c.dh = c.d / c.heads;
  return c;
}

Vec layer_norm(const Vec& x, const Vec& g, const Vec& b, double eps) {
  double mean = 0, var = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + eps) * g[i] + b[i];
  return y;
}

// y = x @ W, W stored [in][out].
Vec mul_in_out(const Vec& x, const Vec& w, const Vec& b, std::size_t out) {
  Vec y(b);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t o = 0; o < out; ++o) y[o] += x[i] * w[i * out + o];
  }
  return y;
}

// y = W x, W stored [out][in].
Vec mul_out_in(const Vec& x, const Vec& w, const Vec* b, std::size_t out) {
  Vec y(out, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    double s = b ? (*b)[o] : 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += w[o * x.size() + i] * x[i];
    y[o] = s;
  }
  return y;
}

double gelu(double x, bool erf_form) {
  if (erf_form) return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

struct Heads {
  std::vector<Vec> q, k, v;  // [head][dh]
};

}  // namespace

std::vector<double> ref_project(const json& cfg, const RawTensors& w, const std::vector<double>& v) {
  const Cfg c = parse_cfg(cfg, w);
  Vec h = c.gpt2 ? layer_norm(v, w.at(c.prefix + "ln_f.weight"), w.at(c.prefix + "ln_f.bias"), c.eps)
                 : layer_norm(v, w.at("gpt_neox.final_layer_norm.weight"), w.at("gpt_neox.final_layer_norm.bias"),
                              c.eps);
  const Vec& head = c.gpt2 ? (c.tied ? w.at(c.prefix + "wte.weight") : w.at("lm_head.weight"))
                           : (c.tied ? w.at("gpt_neox.embed_in.weight") : w.at("embed_out.weight"));
  return mul_out_in(h, head, nullptr, c.vocab);
}

RefResult ref_forward(const json& cfg, const RawTensors& w, const std::vector<std::int32_t>& tokens,
                      const std::optional<RefPatch>& patch) {
  const Cfg c = parse_cfg(cfg, w);
  const std::size_t n = tokens.size(), d = c.d, dh = c.dh;
  std::vector<Vec> x(n, Vec(d));
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      if (c.gpt2) {
        x[t][i] = w.at(c.prefix + "wte.weight")[tokens[t] * d + i] + w.at(c.prefix + "wpe.weight")[t * d + i];
      } else {
        x[t][i] = w.at("gpt_neox.embed_in.weight")[tokens[t] * d + i];
      }
    }
  }
  RefResult r;
  r.embedding = x[n - 1];

  auto rope = [&](Vec& v, std::size_t pos) {
    const std::size_t half = c.rd / 2;
    for (std::size_t i = 0; i < half; ++i) {
      const double inv = 1.0 / std::pow(c.base, static_cast<double>(2 * i) / static_cast<double>(c.rd));
      const double a = static_cast<double>(pos) * inv;
      const double x1 = v[i], x2 = v[i + half];
      v[i] = x1 * std::cos(a) - x2 * std::sin(a);
      v[i + half] = x2 * std::cos(a) + x1 * std::sin(a);
    }
  };

  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = c.gpt2 ? c.prefix + "h." + std::to_string(l) + "."
                                 : "gpt_neox.layers." + std::to_string(l) + ".";
    std::vector<Heads> hs(n);
    std::vector<Vec> mlp_out(n);
    for (std::size_t t = 0; t < n; ++t) {
      Vec h1, qkv;
      if (c.gpt2) {
        h1 = layer_norm(x[t], w.at(p + "ln_1.weight"), w.at(p + "ln_1.bias"), c.eps);
        qkv = mul_in_out(h1, w.at(p + "attn.c_attn.weight"), w.at(p + "attn.c_attn.bias"), 3 * d);
      } else {
        h1 = layer_norm(x[t], w.at(p + "input_layernorm.weight"), w.at(p + "input_layernorm.bias"), c.eps);
        qkv = mul_out_in(h1, w.at(p + "attention.query_key_value.weight"), &w.at(p + "attention.query_key_value.bias"),
                         3 * d);
      }
      for (std::size_t h = 0; h < c.heads; ++h) {
        Vec q(dh), k(dh), v(dh);
        for (std::size_t i = 0; i < dh; ++i) {
          if (c.gpt2) {
            q[i] = qkv[h * dh + i];
            k[i] = qkv[d + h * dh + i];
            v[i] = qkv[2 * d + h * dh + i];
          } else {
            q[i] = qkv[h * 3 * dh + i];
            k[i] = qkv[h * 3 * dh + dh + i];
            v[i] = qkv[h * 3 * dh + 2 * dh + i];
          }
        }
        if (!c.gpt2) {
          rope(q, t);
          rope(k, t);
        }
        hs[t].q.push_back(q);
        hs[t].k.push_back(k);
        hs[t].v.push_back(v);
      }
      if (!c.gpt2) {
        Vec h2 = layer_norm(x[t], w.at(p + "post_attention_layernorm.weight"),
                            w.at(p + "post_attention_layernorm.bias"), c.eps);
        Vec up = mul_out_in(h2, w.at(p + "mlp.dense_h_to_4h.weight"), &w.at(p + "mlp.dense_h_to_4h.bias"),
                            w.at(p + "mlp.dense_h_to_4h.bias").size());
        for (double& u : up) u = gelu(u, c.gelu_erf);
        mlp_out[t] = mul_out_in(up, w.at(p + "mlp.dense_4h_to_h.weight"), &w.at(p + "mlp.dense_4h_to_h.bias"), d);
      }
    }
    std::vector<Vec> attn(n);
    for (std::size_t t = 0; t < n; ++t) {
      Vec ctx(d, 0.0);
      for (std::size_t h = 0; h < c.heads; ++h) {
        std::vector<double> s(t + 1);
        double mx = -INFINITY;
        for (std::size_t u = 0; u <= t; ++u) {
          double dot = 0;
          for (std::size_t i = 0; i < dh; ++i) dot += hs[t].q[h][i] * hs[u].k[h][i];
          s[u] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[u]);
        }
        double z = 0;
        for (double& e : s) z += (e = std::exp(e - mx));
        for (std::size_t u = 0; u <= t; ++u) {
          for (std::size_t i = 0; i < dh; ++i) ctx[h * dh + i] += s[u] / z * hs[u].v[h][i];
        }
      }
      attn[t] = c.gpt2 ? mul_in_out(ctx, w.at(p + "attn.c_proj.weight"), w.at(p + "attn.c_proj.bias"), d)
                       : mul_out_in(ctx, w.at(p + "attention.dense.weight"), &w.at(p + "attention.dense.bias"), d);
    }
    if (patch && patch->layer == l + 1) attn[n - 1] = patch->vec;
    r.attn_out.push_back(attn[n - 1]);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t i = 0; i < d; ++i) x[t][i] += attn[t][i];
    }
    r.post_att.push_back(x[n - 1]);
    for (std::size_t t = 0; t < n; ++t) {
      if (c.gpt2) {
        Vec h2 = layer_norm(x[t], w.at(p + "ln_2.weight"), w.at(p + "ln_2.bias"), c.eps);
        Vec up = mul_in_out(h2, w.at(p + "mlp.c_fc.weight"), w.at(p + "mlp.c_fc.bias"), w.at(p + "mlp.c_fc.bias").size());
        for (double& u : up) u = gelu(u, c.gelu_erf);
        mlp_out[t] = mul_in_out(up, w.at(p + "mlp.c_proj.weight"), w.at(p + "mlp.c_proj.bias"), d);
      }
      for (std::size_t i = 0; i < d; ++i) x[t][i] += mlp_out[t][i];
    }
    r.post_mlp.push_back(x[n - 1]);
  }
  r.final_logits = ref_project(cfg, w, x[n - 1]);
  return r;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

std::vector<double> softmax_ref(const std::vector<double>& logits) {
  double mx = -INFINITY;
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double z = 0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

}  // namespace testsupport
