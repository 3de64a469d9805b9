#pragma once

// Aggregation and markdown tables rebuilt purely from on-disk run artifacts.

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace vimts::harness {

class NoRunsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunRecord {
  std::string name;
  std::string variant;
  double ratio = 1.0;
  std::uint64_t seed = 0;
  std::string manifest_hash;
  bool ok = false;
  std::string error;
  double mse = 0.0;
  double mae = 0.0;
  double locf_mse = 0.0;
  double mean_mse = 0.0;
  double seconds = 0.0;  // from timing.json, 0 when absent
  nlohmann::json hparams;
  std::filesystem::path dir;
};

// Every metrics.json below <root>/runs, sorted by (name, variant, ratio, seed).
std::vector<RunRecord> collect_runs(const std::filesystem::path& root);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t n = 0;
};

MeanStd mean_std(const std::vector<double>& values);

struct SummaryRow {
  std::string name;
  std::string variant;
  double ratio = 1.0;
  MeanStd mse;
  MeanStd mae;
  MeanStd locf_mse;
  MeanStd mean_mse;
  double seconds = 0.0;
  std::size_t failed = 0;
  std::vector<std::uint64_t> seeds;
};

// One row per (name, variant, ratio) over successful seeds.
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& runs);

std::string format_mean_std(const MeanStd& v);

// Variant rows with MSE, MAE and the relative MSE change against "complete".
std::string ablation_table(const std::vector<SummaryRow>& rows, const std::string& name, double ratio);
// Variant rows, one MSE column per ratio.
std::string few_shot_table(const std::vector<SummaryRow>& rows, const std::string& name);

// Writes <root>/report.md and <root>/summary.json; throws NoRunsError when
// there is nothing to report.
std::filesystem::path write_report(const std::filesystem::path& root);

}  // namespace vimts::harness
