#pragma once

// Checkpoint = JSON manifest + one little-endian blob. The manifest lists
// every tensor (parameters, batch-norm buffers, Adam moments) with name,
// dtype, shape and byte offset into the blob, plus the model architecture.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "relconv/error.hpp"
#include "relconv/model.hpp"

namespace relconv {

inline constexpr const char* kCheckpointMagic = "RELCONV-CKPT-v1";

template <typename T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, double> || std::is_same_v<T, float>);
  return std::is_same_v<T, double> ? "f64" : "f32";
}

/// Blob path paired with a manifest path: foo.json -> foo.bin.
inline std::filesystem::path checkpoint_blob_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& manifest_path, ImageGCNModel<T>& model,
                     const nlohmann::json& metadata = nlohmann::json::object()) {
  static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");
  const auto blob_path = checkpoint_blob_path(manifest_path);
  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw IoError("cannot write " + blob_path.string());

  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  auto put = [&](const std::string& name, const std::string& kind, const Tensor<T>& t) {
    const std::uint64_t bytes = t.size() * sizeof(T);
    blob.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(bytes));
    tensors.push_back(
        {{"name", name}, {"kind", kind}, {"dtype", dtype_name<T>()}, {"shape", t.shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  };
  nlohmann::json adam_steps = nlohmann::json::object();
  for (Parameter<T>* p : model.parameters()) {
    put(p->name, "parameter", p->value);
    if (p->adam.step > 0) {
      put(p->name + ".adam_m", "adam_m", p->adam.m);
      put(p->name + ".adam_v", "adam_v", p->adam.v);
      adam_steps[p->name] = p->adam.step;
    }
  }
  for (auto& [name, t] : model.buffers()) put(name, "buffer", *t);
  if (!blob) throw IoError("failed writing " + blob_path.string());

  nlohmann::json j;
  j["magic"] = kCheckpointMagic;
  j["dtype"] = dtype_name<T>();
  j["architecture"] = model.architecture();
  j["blob"] = blob_path.filename().string();
  j["blob_bytes"] = offset;
  j["adam_steps"] = adam_steps;
  j["tensors"] = tensors;
  j["metadata"] = metadata;
  std::ofstream out(manifest_path);
  if (!out) throw IoError("cannot write " + manifest_path.string());
  out << j.dump(1) << '\n';
}

inline nlohmann::json read_checkpoint_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot read checkpoint " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  if (j.value("magic", "") != kCheckpointMagic) throw IoError(manifest_path.string() + " is not a relconv checkpoint");
  return j;
}

/// Rebuilds the model described by the manifest and fills every tensor.
/// Stored tensors may be f32 or f64; they are converted to T.
template <typename T>
ImageGCNModel<T> load_checkpoint(const std::filesystem::path& manifest_path) {
  const nlohmann::json j = read_checkpoint_manifest(manifest_path);
  const auto& arch = j.at("architecture");
  ImageGCNModel<T> model(MpuConfig::from_json(arch.at("mpu")), parse_sharing_mode(arch.at("sharing_mode")),
                         arch.at("relations").get<std::vector<std::string>>(), 0);

  const auto blob_path = manifest_path.parent_path() / j.at("blob").get<std::string>();
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw IoError("cannot read " + blob_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
  if (bytes.size() != j.at("blob_bytes").get<std::uint64_t>())
    throw IoError(blob_path.string() + ": expected " + std::to_string(j.at("blob_bytes").get<std::uint64_t>()) +
                  " bytes, found " + std::to_string(bytes.size()));

  std::map<std::string, nlohmann::json> entries;
  for (const auto& e : j.at("tensors")) entries[e.at("name").get<std::string>()] = e;
  auto fetch = [&](const std::string& name, const Shape& shape) {
    auto it = entries.find(name);
    if (it == entries.end()) throw IoError("checkpoint lacks tensor '" + name + "'");
    const auto& e = it->second;
    if (e.at("shape").get<Shape>() != shape)
      throw IoError("tensor '" + name + "' has shape " + shape_string(e.at("shape").get<Shape>()) + ", model expects " +
                    shape_string(shape));
    const std::string dtype = e.at("dtype");
    const std::uint64_t off = e.at("offset"), len = e.at("bytes");
    const std::size_t width = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
    if (width == 0) throw IoError("tensor '" + name + "' has unsupported dtype " + dtype);
    if (len != numel(shape) * width || off + len > bytes.size()) throw IoError("tensor '" + name + "' is out of bounds");
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (width == 8) {
        double v;
        std::memcpy(&v, bytes.data() + off + i * 8, 8);
        t[i] = static_cast<T>(v);
      } else {
        float v;
        std::memcpy(&v, bytes.data() + off + i * 4, 4);
        t[i] = static_cast<T>(v);
      }
    }
    return t;
  };

  const auto& steps = j.at("adam_steps");
  for (Parameter<T>* p : model.parameters()) {
    p->value = fetch(p->name, p->value.shape());
    if (steps.contains(p->name)) {
      p->adam.step = steps.at(p->name).template get<std::size_t>();
      p->adam.m = fetch(p->name + ".adam_m", p->value.shape());
      p->adam.v = fetch(p->name + ".adam_v", p->value.shape());
    }
  }
  for (auto& [name, t] : model.buffers()) *t = fetch(name, t->shape());
  return model;
}

}  // namespace relconv
