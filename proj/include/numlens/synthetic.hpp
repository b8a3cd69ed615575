// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "numlens/model.hpp"
#include "numlens/safetensors.hpp"

namespace numlens {

/// Random weights in the checkpoint family's native naming and layout
/// (GPT-2 Conv1D [in, out], NeoX per-head interleaved qkv). Layer-norm gains are
/// 1 + 0.2 N(0,1), biases 0.1 N(0,1), matrices scale * N(0,1) / sqrt(fan_in).
std::map<std::string, HostTensor> synthetic_weights(const ModelConfig& config, std::uint64_t seed,
                                                    float scale = 1.5f);

/// Writes config.json and model.safetensors into dir.
void write_synthetic_checkpoint(const std::filesystem::path& dir, const ModelConfig& config, std::uint64_t seed,
                                DType storage = DType::F32, float scale = 1.5f);

}  // namespace numlens
