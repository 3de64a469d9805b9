#pragma once

// Single runs, ablation matrices and few-shot sweeps. Every run writes its
// artifacts under <root>/runs/<name>/<variant>/ratio-<r>/seed-<k>/.

#include "vimts/core/dataset.hpp"
#include "vimts/core/forecast_task.hpp"
#include "vimts/core/splits.hpp"
#include "vimts/harness/manifest.hpp"
#include "vimts/training.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vimts::harness {

// Normalized splits and their forecast tasks; shared by every run of a manifest.
struct PreparedData {
  core::SplitResult split;  // normalized with train statistics
  core::NormalizerStats stats;
  std::vector<core::ForecastTask> train;
  std::vector<core::ForecastTask> val;
  std::vector<core::ForecastTask> test;
  double obs_span = 0.75;
  double horizon_span = 0.25;
};

core::ImtsDataset load_source(const DatasetConfig& desc);
PreparedData prepare_data(const DatasetConfig& desc);

struct RunRequest {
  AblationFlags flags;
  std::uint64_t seed = 0;
  double ratio = 1.0;
};

struct RunOptions {
  bool ssl_only = false;
  // Full parameter checkpoint to start from; skips the SSL stage.
  std::optional<std::filesystem::path> init_checkpoint;
  bool write_predictions = true;
  train::EpochCallback on_epoch;
};

struct RunOutcome {
  std::string variant;
  std::uint64_t seed = 0;
  double ratio = 1.0;
  bool ok = false;
  std::string error;
  train::MetricsReport test;
  double locf_mse = 0.0;
  double mean_mse = 0.0;
  double seconds = 0.0;
  std::filesystem::path dir;
};

std::string ratio_label(double ratio);
std::filesystem::path run_directory(const std::filesystem::path& root, const std::string& name,
                                    const std::string& variant, double ratio, std::uint64_t seed);

// Model configuration after applying the ablation flags and the run seed.
ModelConfig effective_model_config(const ExperimentManifest& m, const RunRequest& desc);

// Runs SSL (unless skipped) then finetuning, evaluates on the test split and
// writes metrics.json, timing.json, history.csv, predictions.csv, splits.json
// and model.safetensors. Training failures are caught and recorded when
// `catch_failures` is set; otherwise they propagate.
RunOutcome run_experiment(const ExperimentManifest& m, const RunRequest& desc, const PreparedData& data,
                          const std::filesystem::path& root, const RunOptions& options = {},
                          bool catch_failures = false);

// Re-evaluates a saved model on the test split and writes eval.json next to it.
train::MetricsReport evaluate_checkpoint(const ExperimentManifest& m, const RunRequest& desc, const PreparedData& data,
                                         const std::filesystem::path& checkpoint,
                                         const std::filesystem::path& out_json);

// "complete" first, then each listed variant, each over every manifest seed.
std::vector<RunOutcome> run_ablation_matrix(const ExperimentManifest& m, const std::vector<std::string>& variants,
                                            const std::filesystem::path& root);

std::vector<RunOutcome> run_few_shot(const ExperimentManifest& m, const std::vector<std::string>& variants,
                                     const std::vector<double>& ratios, const std::filesystem::path& root);

}  // namespace vimts::harness
