// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

// Shared test helpers and an independent double-precision reference forward
// pass that reads checkpoint tensors in their native layouts.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "numlens/model.hpp"
#include "numlens/safetensors.hpp"

namespace testsupport {

std::filesystem::path fixture_dir();
std::filesystem::path data_dir();
std::filesystem::path cli_path();
nlohmann::json load_json(const std::filesystem::path& p);

class TempDir {
 public:
  TempDir();
  ~TempDir();
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// 2 layers, d_model 8, 2 heads, vocab 16.
numlens::ModelConfig tiny_config(numlens::Family family);

/// Raw tensors as doubles, keyed by checkpoint name.
struct RawTensors {
  std::map<std::string, std::vector<std::size_t>> shapes;
  std::map<std::string, std::vector<double>> data;
  const std::vector<double>& at(const std::string& name) const;
};

/// Plain F32/F16 safetensors reader written independently of the library's.
RawTensors read_raw_safetensors(const std::filesystem::path& path);
RawTensors raw_from_host(const std::map<std::string, numlens::HostTensor>& tensors);

struct RefPatch {
  std::size_t layer;  // 1-based
  std::vector<double> vec;
};

struct RefResult {
  std::vector<double> embedding;
  std::vector<std::vector<double>> attn_out, post_att, post_mlp;
  std::vector<double> final_logits;
};

/// Last-position results in double precision. cfg is a HF-style config.json.
RefResult ref_forward(const nlohmann::json& cfg, const RawTensors& w, const std::vector<std::int32_t>& tokens,
                      const std::optional<RefPatch>& patch = std::nullopt);

/// lm_head(final_norm(v)) in double.
std::vector<double> ref_project(const nlohmann::json& cfg, const RawTensors& w, const std::vector<double>& v);

double max_abs_diff(const std::vector<float>& a, const std::vector<double>& b);
double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b);
std::vector<double> softmax_ref(const std::vector<double>& logits);

}  // namespace testsupport
