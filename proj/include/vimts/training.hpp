#pragma once

// Two-stage optimization: masked reconstruction of history sections, then
// supervised forecasting of future queries.

#include "vimts/core/forecast_task.hpp"
#include "vimts/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace vimts::train {

enum class Stage { Ssl, Finetune };
enum class FreezePolicy { All, Attn, Bias, Freeze, Mlp, Norm, NormStar };
enum class MaskSharing { PerChannel, Shared };

Stage parse_stage(const std::string& name);
std::string stage_name(Stage stage);
FreezePolicy parse_policy(const std::string& name);
std::string policy_name(FreezePolicy policy);
MaskSharing parse_mask_sharing(const std::string& name);
std::string mask_sharing_name(MaskSharing sharing);

struct TrainPlan {
  Stage stage = Stage::Finetune;
  double mask_ratio = 0.7;
  MaskSharing mask_sharing = MaskSharing::PerChannel;
  FreezePolicy policy = FreezePolicy::All;
  double lr = 1e-4;
  int batch_size = 16;
  int patience = 15;
  int max_epochs = 100;
  long max_steps = 0;  // 0: no limit
  std::uint64_t seed = 0;
  p2p::HeadMode head_mode = p2p::HeadMode::Patch2Point;
  double clip_norm = 5.0;
  bool parallel = true;

  static TrainPlan from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

// |M| = round(r * P) clamped to [1, P-1]; warns when clamping.
int masked_count(int sections, double ratio);

struct MaskDraw {
  std::vector<int> visible;  // sorted, 1-based
  std::vector<int> masked;   // sorted, 1-based
};

// Uniform without replacement, deterministic in (seed, sample, channel,
// epoch). Shared masks pass the same channel for every channel.
MaskDraw sample_mask(int sections, double ratio, std::uint64_t seed, std::uint64_t sample, int channel, int epoch);

// Parameter-name predicate for a policy.
bool policy_trains(const std::string& name, FreezePolicy policy);
// Sets trainable flags and returns the trainable names in registration order.
std::vector<std::string> apply_freeze_policy(ad::ParameterSet& params, FreezePolicy policy);

// SSL: history targets inside masked sections; plans decode every masked section.
ModelInput ssl_input(const VimtsModel& model, const core::ForecastTask& task, const TrainPlan& plan, int epoch);
// Finetune: all history visible, future sections decoded, queries carry targets.
ModelInput finetune_input(const VimtsModel& model, const core::ForecastTask& task);

// Mean over channels with targets of the per-channel mean squared error.
// Returns an invalid Var when there are no targets.
ad::Var nested_loss(ad::Tape& tape, ad::Var predictions, std::span<const ResolvedQuery> queries, int channels);

class Adam {
 public:
  Adam() = default;
  Adam(const ad::ParameterSet& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  // Updates trainable parameters that received a gradient.
  void step(ad::ParameterSet& params, const ad::Gradients& grads);
  long steps() const { return t_; }

 private:
  double lr_ = 0, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<ad::Matrix> m_;
  std::vector<ad::Matrix> v_;
};

struct BatchResult {
  ad::Gradients grads;  // mean over contributing samples
  double loss = 0.0;    // mean over contributing samples
  int contributing = 0;
};

// Per-sample tapes, reduced in input order so serial and parallel agree bit for bit.
BatchResult batch_gradients(const VimtsModel& model, std::span<const ModelInput> inputs, p2p::HeadMode mode,
                            bool parallel);
// Mean per-sample loss without gradients; NaN when nothing contributes.
double mean_loss(const VimtsModel& model, std::span<const ModelInput> inputs, p2p::HeadMode mode, bool parallel);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct StageResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val = 0.0;
  long steps = 0;
  bool early_stopped = false;
  std::vector<std::string> trainable;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Restores the best-validation parameters before returning. Throws
// TrainingDivergedError on a non-finite loss.
StageResult train_stage(VimtsModel& model, const TrainPlan& plan, const std::vector<core::ForecastTask>& train,
                        const std::vector<core::ForecastTask>& val, const EpochCallback& on_epoch = {});

struct ChannelMetrics {
  int channel = 0;
  double mse = 0.0;
  double mae = 0.0;
  std::size_t n = 0;
};

struct MetricsReport {
  double mse = 0.0;  // pooled over queries
  double mae = 0.0;
  double channel_mean_mse = 0.0;
  std::size_t n_queries = 0;
  std::vector<ChannelMetrics> per_channel;

  nlohmann::json to_json() const;
};

struct PredictionRow {
  std::string sample_id;
  int channel = 0;
  double time = 0.0;
  double prediction = 0.0;
  double target = 0.0;
};

MetricsReport metrics_from_rows(std::span<const PredictionRow> rows, int channels);

MetricsReport evaluate(const VimtsModel& model, const std::vector<core::ForecastTask>& tasks, p2p::HeadMode mode,
                       std::vector<PredictionRow>* rows = nullptr, bool parallel = true);

enum class Baseline { Locf, ChannelMean };
std::string baseline_name(Baseline b);

// Per-channel mean of training history values; fallback for empty channels.
std::vector<double> training_channel_means(const std::vector<core::ForecastTask>& train, int channels);

MetricsReport evaluate_baseline(Baseline kind, const std::vector<core::ForecastTask>& tasks,
                                const std::vector<double>& fallback, std::vector<PredictionRow>* rows = nullptr);

}  // namespace vimts::train
