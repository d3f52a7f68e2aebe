#pragma once

// Weight files: a JSON manifest next to a flat little-endian f32 stream.
//
//   {"format": "genisp-weights-1", "data": "<name>.bin",
//    "tensors": [{"name": ..., "shape": [...], "offset": <byte offset>}, ...]}

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "genisp/color_modules.hpp"
#include "genisp/io/graw.hpp"
#include <nlohmann/json.hpp>

namespace genisp::io {

inline constexpr const char* kWeightsFormat = "genisp-weights-1";

class WeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EncodedWeights {
  nlohmann::json manifest;
  std::vector<std::uint8_t> data;
};

template <typename T>
EncodedWeights encode_weights(const ParamRefs<T>& params, const std::string& data_name) {
  EncodedWeights out;
  out.manifest["format"] = kWeightsFormat;
  out.manifest["data"] = data_name;
  out.manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : params) {
    out.manifest["tensors"].push_back(
        {{"name", name}, {"shape", t->shape()}, {"offset", out.data.size()}});
    for (T v : t->data()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) out.data.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  return out;
}

// Fills `params` from the manifest; names and shapes must match exactly.
template <typename T>
void decode_weights(const ParamRefs<T>& params, const nlohmann::json& manifest,
                    std::span<const std::uint8_t> data) {
  if (manifest.value("format", "") != kWeightsFormat) {
    throw WeightsError("unsupported weights format");
  }
  std::map<std::string, nlohmann::json> entries;
  for (const auto& e : manifest.at("tensors")) entries[e.at("name").get<std::string>()] = e;
  if (entries.size() != params.size()) {
    throw WeightsError("manifest has " + std::to_string(entries.size()) + " tensors, model has " +
                       std::to_string(params.size()));
  }
  for (const auto& [name, t] : params) {
    auto it = entries.find(name);
    if (it == entries.end()) throw WeightsError("manifest lacks tensor '" + name + "'");
    const auto shape = it->second.at("shape").template get<Shape>();
    if (shape != t->shape()) {
      throw WeightsError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                         shape_str(t->shape()));
    }
    const auto offset = it->second.at("offset").template get<std::size_t>();
    if (offset + t->numel() * 4 > data.size()) {
      throw WeightsError("tensor '" + name + "' runs past end of data");
    }
    for (std::size_t i = 0; i < t->numel(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(data[offset + 4 * i + b]) << (8 * b);
      }
      (*t)[i] = static_cast<T>(std::bit_cast<float>(bits));
    }
  }
}

// Writes <stem>.json and <stem>.bin; `manifest_path` names the .json file.
template <typename T>
void save_weights(const ParamRefs<T>& params, const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const fs::path mpath(manifest_path);
  fs::path bin = mpath;
  bin.replace_extension(".bin");
  const EncodedWeights enc = encode_weights(params, bin.filename().string());
  write_file(bin.string(), enc.data);
  const std::string text = enc.manifest.dump(2) + "\n";
  write_file(mpath.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

template <typename T>
void load_weights(const ParamRefs<T>& params, const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  if (!in) throw WeightsError("cannot open weights manifest '" + manifest_path + "'");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw WeightsError(std::string("malformed weights manifest: ") + e.what());
  }
  const fs::path bin = fs::path(manifest_path).parent_path() / manifest.at("data").get<std::string>();
  decode_weights(params, manifest, read_file(bin.string()));
}

}  // namespace genisp::io
