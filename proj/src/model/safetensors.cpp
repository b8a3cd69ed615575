// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "numlens/safetensors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "numlens/error.hpp"

namespace numlens {
namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "safetensors payloads are little-endian");

std::string dtype_name(DType d) {
  switch (d) {
    case DType::F32: return "F32";
    case DType::F16: return "F16";
    case DType::BF16: return "BF16";
    case DType::F64: return "F64";
  }
  return "?";
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F16:
    case DType::BF16: return 2;
    case DType::F64: return 8;
  }
  return 0;
}

std::string shape_string(const Shape& s) {
  return fmt::format("[{}]", fmt::join(s, ", "));
}

std::size_t element_count(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1Fu;
  std::uint32_t mant = h & 0x3FFu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {  // subnormal: renormalize
      exp = 127 - 15 + 1;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3FFu;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

std::uint16_t float_to_half(float f) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
  const std::uint32_t abs = x & 0x7FFFFFFFu;
  if (abs >= 0x7F800000u) {  // inf / nan
    return static_cast<std::uint16_t>(sign | 0x7C00u | (abs > 0x7F800000u ? 0x200u : 0u));
  }
  if (abs >= 0x477FF000u) return static_cast<std::uint16_t>(sign | 0x7C00u);  // overflow -> inf
  if (abs < 0x38800000u) {  // result is subnormal or zero
    if (abs < 0x33000000u) return sign;
    const std::uint32_t e = abs >> 23;
    const std::uint32_t m = (abs & 0x7FFFFFu) | 0x800000u;
    const std::uint32_t shift = 126 - e;  // value = m * 2^(e-150) = half_m * 2^-24
    std::uint32_t half_m = m >> shift;
    const std::uint32_t rem = m & ((1u << shift) - 1);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half_m & 1u))) ++half_m;
    return static_cast<std::uint16_t>(sign | half_m);
  }
  std::uint32_t h = ((abs >> 13) - ((127 - 15) << 10));
  const std::uint32_t rem = abs & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;
  return static_cast<std::uint16_t>(sign | h);
}

float bfloat16_to_float(std::uint16_t b) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(b) << 16);
}

namespace {

DType parse_dtype(const std::string& s, const std::string& tensor) {
  if (s == "F32") return DType::F32;
  if (s == "F16") return DType::F16;
  if (s == "BF16") return DType::BF16;
  if (s == "F64") return DType::F64;
  throw_error(ErrorKind::Load, fmt::format("unsupported dtype {} for tensor {}", s, tensor));
}

}  // namespace

SafeTensorsFile::SafeTensorsFile(fs::path path) : path_(std::move(path)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw_error(ErrorKind::Load, "cannot open weights file " + path_.string());
  const std::uint64_t file_size = fs::file_size(path_);
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || header_len > file_size - 8 || header_len > (std::uint64_t{1} << 30)) {
    throw_error(ErrorKind::Load, "corrupt safetensors header in " + path_.string());
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  json meta;
  try {
    meta = json::parse(header);
  } catch (const json::exception& e) {
    throw_error(ErrorKind::Load, fmt::format("corrupt safetensors header in {}: {}", path_.string(), e.what()));
  }
  const std::uint64_t data_start = 8 + header_len;
  for (const auto& [name, v] : meta.items()) {
    if (name == "__metadata__") {
      for (const auto& [k, mv] : v.items()) metadata_[k] = mv.is_string() ? mv.get<std::string>() : mv.dump();
      continue;
    }
    Entry e;
    e.dtype = parse_dtype(v.at("dtype").get<std::string>(), name);
    e.shape = v.at("shape").get<Shape>();
    const auto offsets = v.at("data_offsets").get<std::vector<std::uint64_t>>();
    if (offsets.size() != 2 || offsets[0] > offsets[1]) {
      throw_error(ErrorKind::Load, "corrupt tensor " + name + ": bad data_offsets");
    }
    e.begin = data_start + offsets[0];
    e.end = data_start + offsets[1];
    if (e.end > file_size || e.end - e.begin != element_count(e.shape) * dtype_size(e.dtype)) {
      throw_error(ErrorKind::Load, "corrupt tensor " + name + ": payload size does not match shape");
    }
    entries_.emplace(name, std::move(e));
  }
}

const SafeTensorsFile::Entry* SafeTensorsFile::find(const std::string& name) const {
  auto it = entries_.find(name);
  return it == entries_.end() ? nullptr : &it->second;
}

std::optional<Shape> SafeTensorsFile::shape(const std::string& name) const {
  if (const Entry* e = find(name)) return e->shape;
  return std::nullopt;
}

std::vector<std::string> SafeTensorsFile::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

std::vector<float> SafeTensorsFile::read(const std::string& name) const {
  const Entry* e = find(name);
  if (!e) throw_error(ErrorKind::Load, "missing weight " + name);
  std::ifstream in(path_, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(e->begin));
  const std::size_t n = element_count(e->shape);
  std::vector<float> out(n);
  auto read_raw = [&](void* dst, std::size_t bytes) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (!in) throw_error(ErrorKind::Load, "corrupt tensor " + name + ": short read");
  };
  switch (e->dtype) {
    case DType::F32:
      read_raw(out.data(), n * 4);
      break;
    case DType::F16:
    case DType::BF16: {
      std::vector<std::uint16_t> raw(n);
      read_raw(raw.data(), n * 2);
      const bool half = e->dtype == DType::F16;
      for (std::size_t i = 0; i < n; ++i) out[i] = half ? half_to_float(raw[i]) : bfloat16_to_float(raw[i]);
      break;
    }
    case DType::F64: {
      std::vector<double> raw(n);
      read_raw(raw.data(), n * 8);
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(raw[i]);
      break;
    }
  }
  return out;
}

namespace {

class ShardedWeights final : public WeightSource {
 public:
  explicit ShardedWeights(const fs::path& index_path) {
    std::ifstream in(index_path);
    if (!in) throw_error(ErrorKind::Load, "cannot open shard index " + index_path.string());
    json idx;
    try {
      idx = json::parse(in);
    } catch (const json::exception& e) {
      throw_error(ErrorKind::Load, "corrupt shard index " + index_path.string() + ": " + e.what());
    }
    std::map<std::string, std::size_t> shard_slot;
    for (const auto& [tensor, file] : idx.at("weight_map").items()) {
      const std::string f = file.get<std::string>();
      auto [it, inserted] = shard_slot.emplace(f, shards_.size());
      if (inserted) shards_.push_back(std::make_unique<SafeTensorsFile>(index_path.parent_path() / f));
      owner_[tensor] = it->second;
    }
  }
  std::optional<Shape> shape(const std::string& name) const override {
    auto it = owner_.find(name);
    if (it == owner_.end()) return std::nullopt;
    return shards_[it->second]->shape(name);
  }
  std::vector<float> read(const std::string& name) const override {
    auto it = owner_.find(name);
    if (it == owner_.end()) throw_error(ErrorKind::Load, "missing weight " + name);
    return shards_[it->second]->read(name);
  }
  std::vector<std::string> names() const override {
    std::vector<std::string> out;
    for (const auto& [k, _] : owner_) out.push_back(k);
    return out;
  }

 private:
  std::vector<std::unique_ptr<SafeTensorsFile>> shards_;
  std::map<std::string, std::size_t> owner_;
};

}  // namespace

std::unique_ptr<WeightSource> open_weights(const fs::path& path) {
  if (fs::is_directory(path)) {
    if (fs::exists(path / "model.safetensors")) return std::make_unique<SafeTensorsFile>(path / "model.safetensors");
    if (fs::exists(path / "model.safetensors.index.json")) {
      return std::make_unique<ShardedWeights>(path / "model.safetensors.index.json");
    }
    throw_error(ErrorKind::Load, "no safetensors checkpoint in " + path.string());
  }
  if (path.string().ends_with(".json")) return std::make_unique<ShardedWeights>(path);
  return std::make_unique<SafeTensorsFile>(path);
}

HostTensor* InMemoryWeights::get(const std::string& name) {
  auto it = tensors_.find(name);
  return it == tensors_.end() ? nullptr : &it->second;
}

std::optional<Shape> InMemoryWeights::shape(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) return std::nullopt;
  return it->second.shape;
}

std::vector<float> InMemoryWeights::read(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw_error(ErrorKind::Load, "missing weight " + name);
  return it->second.data;
}

std::vector<std::string> InMemoryWeights::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : tensors_) out.push_back(k);
  return out;
}

void write_safetensors(const fs::path& path, const std::map<std::string, HostTensor>& tensors, DType storage,
                       const std::map<std::string, std::string>& metadata) {
  if (storage != DType::F32 && storage != DType::F16) {
    throw_error(ErrorKind::Input, "write_safetensors supports F32 and F16 storage only");
  }
  json header = json::object();
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    if (element_count(t.shape) != t.data.size()) {
      throw_error(ErrorKind::Input, "tensor " + name + " data does not match its shape");
    }
    const std::uint64_t bytes = t.data.size() * dtype_size(storage);
    header[name] = {{"dtype", dtype_name(storage)}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string hdr = header.dump();
  while ((hdr.size() + 8) % 8 != 0) hdr.push_back(' ');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_error(ErrorKind::Runtime, "cannot write " + path.string());
  const std::uint64_t len = hdr.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  for (const auto& [name, t] : tensors) {
    if (storage == DType::F32) {
      out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
    } else {
      std::vector<std::uint16_t> h(t.data.size());
      for (std::size_t i = 0; i < h.size(); ++i) h[i] = float_to_half(t.data[i]);
      out.write(reinterpret_cast<const char*>(h.data()), static_cast<std::streamsize>(h.size() * 2));
    }
  }
  if (!out) throw_error(ErrorKind::Runtime, "short write to " + path.string());
}

}  // namespace numlens
