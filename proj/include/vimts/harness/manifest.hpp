#pragma once

// Experiment manifests: dataset, model, both training stages, ablation flags
// and seeds in one JSON document.

#include "vimts/core/dataset_io.hpp"
#include "vimts/core/synthetic.hpp"
#include "vimts/model.hpp"
#include "vimts/training.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vimts::harness {

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | csv
  core::SyntheticConfig synthetic;
  std::uint64_t seed = 0;  // synthetic generator seed
  std::string path;        // canonical CSV when source == csv
  core::DatasetSchema schema;
  std::array<double, 3> split{0.6, 0.2, 0.2};
  std::uint64_t split_seed = 0;
};

struct AblationFlags {
  bool no_gcn = false;
  bool no_pretrained = false;
  bool no_ssl = false;
  bool rp_transformer = false;
  p2p::HeadMode ssl_head = p2p::HeadMode::Patch2Point;
  p2p::HeadMode finetune_head = p2p::HeadMode::Patch2Point;

  // "complete" or the set flags joined by '+', e.g. "no_gcn+no_ssl".
  std::string label() const;
};

// Applies the named variant ("complete", "no_gcn", "no_ssl", "no_pretrained",
// "rp_transformer", "direct_head", or a '+'-joined combination) on top of `base`.
AblationFlags parse_variant(const std::string& name, AblationFlags base = {});

struct ExperimentManifest {
  std::string name = "default";
  DatasetConfig dataset;
  ModelConfig model;
  train::TrainPlan ssl;
  // Finetuning defaults to the Norm policy.
  train::TrainPlan finetune = [] {
    train::TrainPlan p;
    p.policy = train::FreezePolicy::Norm;
    return p;
  }();
  AblationFlags ablation;
  std::string pretrained;  // safetensors checkpoint, optional
  std::string keymap;      // empty: bundled MAE-base key map
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double few_shot_ratio = 1.0;
  std::string output_dir;

  // Throws ConfigError on unknown keys or invalid values.
  static ExperimentManifest from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  // FNV-1a over the canonical JSON without output_dir and seeds, as 16 hex digits.
  std::string hash() const;
};

ExperimentManifest load_manifest(const std::filesystem::path& path);

// Sets a dotted path ("finetune.lr") in a manifest document. The value is
// parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace vimts::harness
