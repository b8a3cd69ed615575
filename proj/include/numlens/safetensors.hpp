// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace numlens {

enum class DType { F32, F16, BF16, F64 };

std::string dtype_name(DType d);
std::size_t dtype_size(DType d);

using Shape = std::vector<std::size_t>;
std::string shape_string(const Shape& s);
std::size_t element_count(const Shape& s);

/// A named float tensor held in host memory (always 32-bit once loaded).
struct HostTensor {
  Shape shape;
  std::vector<float> data;
};

/// Anything that can hand out named tensors: a safetensors archive, a sharded
/// checkpoint, or an in-memory map. Reads upcast 16-bit storage to float32.
class WeightSource {
 public:
  virtual ~WeightSource() = default;
  virtual std::optional<Shape> shape(const std::string& name) const = 0;
  virtual std::vector<float> read(const std::string& name) const = 0;
  virtual std::vector<std::string> names() const = 0;
};

/// One .safetensors file: 8-byte little-endian header length, JSON header, raw
/// little-endian payload. Tensors are read on demand.
class SafeTensorsFile final : public WeightSource {
 public:
  explicit SafeTensorsFile(std::filesystem::path path);

  struct Entry {
    DType dtype;
    Shape shape;
    std::uint64_t begin = 0;  // absolute file offsets
    std::uint64_t end = 0;
  };

  std::optional<Shape> shape(const std::string& name) const override;
  std::vector<float> read(const std::string& name) const override;
  std::vector<std::string> names() const override;
  const Entry* find(const std::string& name) const;
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

 private:
  std::filesystem::path path_;
  std::map<std::string, Entry> entries_;
  std::map<std::string, std::string> metadata_;
};

/// Opens a checkpoint: a single .safetensors file, a *.safetensors.index.json
/// shard map, or a directory holding model.safetensors or
/// model.safetensors.index.json.
std::unique_ptr<WeightSource> open_weights(const std::filesystem::path& path);

class InMemoryWeights final : public WeightSource {
 public:
  InMemoryWeights() = default;
  explicit InMemoryWeights(std::map<std::string, HostTensor> tensors) : tensors_(std::move(tensors)) {}
  void put(std::string name, HostTensor t) { tensors_[std::move(name)] = std::move(t); }
  void erase(const std::string& name) { tensors_.erase(name); }
  HostTensor* get(const std::string& name);
  const std::map<std::string, HostTensor>& tensors() const { return tensors_; }

  std::optional<Shape> shape(const std::string& name) const override;
  std::vector<float> read(const std::string& name) const override;
  std::vector<std::string> names() const override;

 private:
  std::map<std::string, HostTensor> tensors_;
};

/// Writes tensors (sorted by name) as F32 or F16 storage.
void write_safetensors(const std::filesystem::path& path, const std::map<std::string, HostTensor>& tensors,
                       DType storage = DType::F32, const std::map<std::string, std::string>& metadata = {});

float half_to_float(std::uint16_t h);
std::uint16_t float_to_half(float f);  // round to nearest even
float bfloat16_to_float(std::uint16_t b);

}  // namespace numlens
