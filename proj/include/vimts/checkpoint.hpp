#pragma once

// Flat name -> array checkpoints in the safetensors layout: an 8-byte
// little-endian header length, a JSON header of {name: {dtype, shape,
// data_offsets}}, then raw little-endian data. F32 and F64 are read; F64 is
// written.

#include "vimts/autodiff.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vimts::checkpoint {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  std::size_t numel() const { return data.size(); }
};

using TensorMap = std::map<std::string, Tensor>;

struct SafetensorsFile {
  TensorMap tensors;
  std::map<std::string, std::string> metadata;
};

SafetensorsFile read_safetensors(const std::filesystem::path& path);
// `f32` stores single precision (used to fabricate foreign checkpoints in tests).
void write_safetensors(const std::filesystem::path& path, const TensorMap& tensors,
                       const std::map<std::string, std::string>& metadata = {}, bool f32 = false);

Tensor to_tensor(const ad::Matrix& m);

// Saves every parameter as a 2-D F64 tensor.
void save_parameters(const ad::ParameterSet& params, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& metadata = {});

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;     // in params, absent from file
  std::vector<std::string> unexpected;  // in file, absent from params
};

// Loads tensors by exact name. Shape mismatches always throw; with `strict`,
// missing or unexpected names throw too.
LoadReport load_parameters(ad::ParameterSet& params, const std::filesystem::path& path, bool strict = true);

// Source (foreign) key template -> internal name template relative to the
// backbone prefix. `{i}` matches a layer number. An empty target excludes the key.
struct KeyMapEntry {
  std::string source;
  std::string target;
  bool transpose = false;
};

std::vector<KeyMapEntry> read_keymap(const std::filesystem::path& path);
std::filesystem::path default_keymap_path();

struct PretrainedManifest {
  std::string checkpoint;
  std::size_t checkpoint_keys = 0;
  std::vector<std::string> excluded;      // source keys skipped by design
  std::vector<std::string> mapped;        // source keys copied into the model
  std::vector<std::string> loaded;        // internal names populated
  std::vector<std::string> fresh;         // internal backbone names left at init

  double mapped_fraction() const;
  nlohmann::json to_json() const;
};

// Copies encoder, decoder, norm, projection and mask-token weights from a
// visual MAE checkpoint into the backbone parameters named `<prefix>.*`.
// Missing keys, unmapped keys and shape mismatches throw ConfigError.
PretrainedManifest load_pretrained(ad::ParameterSet& params, const std::string& prefix,
                                   const std::filesystem::path& checkpoint,
                                   const std::filesystem::path& keymap = default_keymap_path());

}  // namespace vimts::checkpoint
