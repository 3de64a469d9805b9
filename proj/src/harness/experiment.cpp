#include "vimts/harness/experiment.hpp"

#include "vimts/checkpoint.hpp"
#include "vimts/core/dataset_io.hpp"
#include "vimts/core/normalizer.hpp"
#include "vimts/core/synthetic.hpp"
#include "vimts/errors.hpp"
#include "vimts/fileio.hpp"
#include "vimts/log.hpp"

#include <chrono>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

namespace vimts::harness {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json stage_json(const train::StageResult& r) {
  return json{{"best_epoch", r.best_epoch},
              {"best_val", r.best_val},
              {"epochs", r.history.size()},
              {"steps", r.steps},
              {"early_stopped", r.early_stopped},
              {"trainable", r.trainable.size()}};
}

std::string history_csv(const std::string& hash, const std::vector<std::pair<std::string, train::EpochRecord>>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "# manifest_hash=" << hash << "\n";
  os << "stage,epoch,train_loss,val_loss\n";
  for (const auto& [stage, e] : rows) os << stage << ',' << e.epoch << ',' << e.train_loss << ',' << e.val_loss << '\n';
  return os.str();
}

std::string predictions_csv(const std::string& hash, const std::vector<train::PredictionRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "# manifest_hash=" << hash << "\n";
  os << "sample_id,channel,time,prediction,target\n";
  for (const auto& r : rows) {
    os << r.sample_id << ',' << r.channel << ',' << r.time << ',' << r.prediction << ',' << r.target << '\n';
  }
  return os.str();
}

void write_json(const fs::path& path, const json& j) { io::write_atomic(path, j.dump(2) + "\n"); }

std::vector<std::size_t> pick(const std::vector<std::size_t>& source, const std::vector<std::size_t>& positions) {
  std::vector<std::size_t> out;
  out.reserve(positions.size());
  for (auto p : positions) out.push_back(source.at(p));
  return out;
}

train::TrainPlan stage_plan(train::TrainPlan plan, std::uint64_t seed, p2p::HeadMode head, bool pretrained) {
  plan.seed = plan.seed * 1000003ULL + seed;
  plan.head_mode = head;
  if (!pretrained && plan.policy != train::FreezePolicy::All) {
    log::warn("no pretrained weights loaded; freeze policy " + train::policy_name(plan.policy) +
              " replaced by ALL for the " + train::stage_name(plan.stage) + " stage");
    plan.policy = train::FreezePolicy::All;
  }
  return plan;
}

json hparams_json(const ExperimentManifest& m, const ModelConfig& mc) {
  return json{{"mask_ratio", m.ssl.mask_ratio},
              {"section_size", mc.section_size},
              {"hops", mc.hops},
              {"graph_embed_dim", mc.graph_embed_dim},
              {"enc_dim", mc.enc_dim},
              {"ssl_lr", m.ssl.lr},
              {"finetune_lr", m.finetune.lr},
              {"finetune_policy", train::policy_name(m.finetune.policy)}};
}

}  // namespace

core::ImtsDataset load_source(const DatasetConfig& desc) {
  if (desc.source == "synthetic") return core::generate_synthetic(desc.synthetic, desc.seed).dataset;
  if (desc.source == "csv") return core::load_dataset(desc.path, desc.schema);
  throw ConfigError("dataset.source must be synthetic or csv");
}

PreparedData prepare_data(const DatasetConfig& desc) {
  const core::ImtsDataset source = load_source(desc);
  PreparedData d;
  d.obs_span = source.meta.obs_span;
  d.horizon_span = source.meta.horizon_span;
  d.split = core::split_dataset(source, desc.split, desc.split_seed);
  if (d.split.train.empty() || d.split.val.empty() || d.split.test.empty()) {
    throw ConfigError("dataset split leaves an empty train, validation or test set");
  }
  d.stats = core::fit_normalizer(d.split.train);
  d.split.train = core::apply_normalizer(d.split.train, d.stats);
  d.split.val = core::apply_normalizer(d.split.val, d.stats);
  d.split.test = core::apply_normalizer(d.split.test, d.stats);
  d.train = core::build_forecast_tasks(d.split.train);
  d.val = core::build_forecast_tasks(d.split.val);
  d.test = core::build_forecast_tasks(d.split.test);
  return d;
}

std::string ratio_label(double ratio) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", ratio);
  return buf;
}

fs::path run_directory(const fs::path& root, const std::string& name, const std::string& variant, double ratio,
                       std::uint64_t seed) {
  return root / "runs" / name / variant / ("ratio-" + ratio_label(ratio)) / ("seed-" + std::to_string(seed));
}

ModelConfig effective_model_config(const ExperimentManifest& m, const RunRequest& desc) {
  ModelConfig mc = m.model;
  mc.use_graph = mc.use_graph && !desc.flags.no_gcn;
  if (desc.flags.rp_transformer) mc.backbone_kind = backbone::BackboneKind::Plain;
  mc.init_seed = m.model.init_seed * 1000003ULL + desc.seed;
  return mc;
}

RunOutcome run_experiment(const ExperimentManifest& m, const RunRequest& desc, const PreparedData& data,
                          const fs::path& root, const RunOptions& options, bool catch_failures) {
  const auto t0 = std::chrono::steady_clock::now();
  RunOutcome out;
  out.variant = desc.flags.label();
  out.seed = desc.seed;
  out.ratio = desc.ratio;
  out.dir = run_directory(root, m.name, out.variant, desc.ratio, desc.seed);
  fs::create_directories(out.dir);
  const std::string hash = m.hash();
  json metrics{{"manifest_hash", hash},
               {"name", m.name},
               {"variant", out.variant},
               {"seed", desc.seed},
               {"ratio", desc.ratio}};
  json config = m.to_json();
  config["variant"] = out.variant;
  config["run_seed"] = desc.seed;
  config["ratio"] = desc.ratio;
  config["manifest_hash"] = hash;
  write_json(out.dir / "config.json", config);

  try {
    const ModelConfig mc = effective_model_config(m, desc);
    metrics["model"] = mc.to_json();
    metrics["hparams"] = hparams_json(m, mc);
    VimtsModel model(mc, data.obs_span, data.horizon_span);

    bool pretrained = false;
    if (options.init_checkpoint) {
      checkpoint::load_parameters(model.params(), *options.init_checkpoint, true);
      metrics["init_checkpoint"] = options.init_checkpoint->string();
      pretrained = true;
    } else if (!desc.flags.no_pretrained && !m.pretrained.empty()) {
      const fs::path keymap = m.keymap.empty() ? checkpoint::default_keymap_path() : fs::path(m.keymap);
      const auto pm = checkpoint::load_pretrained(model.params(), "backbone", m.pretrained, keymap);
      metrics["pretrained"] = pm.to_json();
      pretrained = true;
    }

    std::vector<std::size_t> positions(data.split.train.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    std::vector<core::ForecastTask> train_tasks = data.train;
    if (desc.ratio < 1.0) {
      train_tasks = core::build_forecast_tasks(core::few_shot_subset(data.split.train, desc.ratio, desc.seed, &positions),
                                                data.obs_span, data.horizon_span);
    }
    write_json(out.dir / "splits.json", json{{"manifest_hash", hash},
                                             {"train", data.split.train_indices},
                                             {"val", data.split.val_indices},
                                             {"test", data.split.test_indices},
                                             {"few_shot_train", pick(data.split.train_indices, positions)}});

    std::vector<std::pair<std::string, train::EpochRecord>> history;
    json timing{{"manifest_hash", hash}};
    auto recorder = [&](const std::string& stage) {
      return [&, stage](const train::EpochRecord& e) {
        history.emplace_back(stage, e);
        if (options.on_epoch) options.on_epoch(e);
      };
    };

    metrics["ssl"] = nullptr;
    const bool run_ssl = !desc.flags.no_ssl && !options.init_checkpoint;
    if (run_ssl) {
      const auto plan = stage_plan(m.ssl, desc.seed, desc.flags.ssl_head, pretrained);
      const auto ts = std::chrono::steady_clock::now();
      const auto r = train::train_stage(model, plan, train_tasks, data.val, recorder("ssl"));
      timing["ssl_seconds"] = seconds_since(ts);
      metrics["ssl"] = stage_json(r);
    }
    if (options.ssl_only) {
      if (!run_ssl) throw ConfigError("ssl stage is disabled for this run");
      checkpoint::save_parameters(model.params(), out.dir / "ssl.safetensors",
                                  {{"manifest_hash", hash}, {"variant", out.variant}, {"stage", "ssl"}});
      io::write_atomic(out.dir / "history.csv", history_csv(hash, history));
      metrics["status"] = "ok";
      metrics["stage"] = "ssl";
      write_json(out.dir / "ssl_metrics.json", metrics);
      timing["total_seconds"] = seconds_since(t0);
      write_json(out.dir / "timing.json", timing);
      out.ok = true;
      out.seconds = seconds_since(t0);
      return out;
    }

    const auto plan = stage_plan(m.finetune, desc.seed, desc.flags.finetune_head, pretrained);
    const auto tf = std::chrono::steady_clock::now();
    const auto r = train::train_stage(model, plan, train_tasks, data.val, recorder("finetune"));
    timing["finetune_seconds"] = seconds_since(tf);
    metrics["finetune"] = stage_json(r);

    const auto te = std::chrono::steady_clock::now();
    std::vector<train::PredictionRow> rows;
    out.test = train::evaluate(model, data.test, desc.flags.finetune_head, &rows);
    const auto means = train::training_channel_means(train_tasks, mc.channels);
    const auto locf = train::evaluate_baseline(train::Baseline::Locf, data.test, means);
    const auto mean = train::evaluate_baseline(train::Baseline::ChannelMean, data.test, means);
    out.locf_mse = locf.mse;
    out.mean_mse = mean.mse;
    timing["eval_seconds"] = seconds_since(te);

    metrics["status"] = "ok";
    metrics["test"] = out.test.to_json();
    metrics["test"]["seed"] = desc.seed;
    metrics["baselines"] = json{{"locf", {{"mse", locf.mse}, {"mae", locf.mae}}},
                                {"channel_mean", {{"mse", mean.mse}, {"mae", mean.mae}}}};
    write_json(out.dir / "metrics.json", metrics);
    io::write_atomic(out.dir / "history.csv", history_csv(hash, history));
    if (options.write_predictions) io::write_atomic(out.dir / "predictions.csv", predictions_csv(hash, rows));
    checkpoint::save_parameters(model.params(), out.dir / "model.safetensors",
                                {{"manifest_hash", hash}, {"variant", out.variant}, {"stage", "finetune"}});
    timing["total_seconds"] = seconds_since(t0);
    write_json(out.dir / "timing.json", timing);
    out.ok = true;
  } catch (const std::exception& e) {
    if (!catch_failures) throw;
    out.ok = false;
    out.error = e.what();
    metrics["status"] = "failed";
    metrics["error"] = out.error;
    write_json(out.dir / "metrics.json", metrics);
    log::warn("run " + out.variant + " seed " + std::to_string(desc.seed) + " failed: " + out.error);
  }
  out.seconds = seconds_since(t0);
  return out;
}

train::MetricsReport evaluate_checkpoint(const ExperimentManifest& m, const RunRequest& desc, const PreparedData& data,
                                         const fs::path& checkpoint, const fs::path& out_json) {
  VimtsModel model(effective_model_config(m, desc), data.obs_span, data.horizon_span);
  checkpoint::load_parameters(model.params(), checkpoint, true);
  const auto report = train::evaluate(model, data.test, desc.flags.finetune_head);
  write_json(out_json, json{{"manifest_hash", m.hash()},
                            {"checkpoint", checkpoint.string()},
                            {"variant", desc.flags.label()},
                            {"seed", desc.seed},
                            {"test", report.to_json()}});
  return report;
}

namespace {

std::vector<AblationFlags> variant_flags(const ExperimentManifest& m, const std::vector<std::string>& variants) {
  std::vector<AblationFlags> out{m.ablation};
  std::set<std::string> seen{m.ablation.label()};
  for (const auto& v : variants) {
    const auto f = parse_variant(v, m.ablation);
    if (seen.insert(f.label()).second) out.push_back(f);
  }
  return out;
}

}  // namespace

std::vector<RunOutcome> run_ablation_matrix(const ExperimentManifest& m, const std::vector<std::string>& variants,
                                            const fs::path& root) {
  return run_few_shot(m, variants, {m.few_shot_ratio}, root);
}

std::vector<RunOutcome> run_few_shot(const ExperimentManifest& m, const std::vector<std::string>& variants,
                                     const std::vector<double>& ratios, const fs::path& root) {
  const auto flags = variant_flags(m, variants);
  for (double r : ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError("few-shot ratios must lie in (0, 1]");
  }
  const PreparedData data = prepare_data(m.dataset);
  std::vector<RunOutcome> out;
  for (double ratio : ratios) {
    for (const auto& f : flags) {
      for (auto seed : m.seeds) {
        log::info("run " + f.label() + " ratio " + ratio_label(ratio) + " seed " + std::to_string(seed));
        out.push_back(run_experiment(m, RunRequest{f, seed, ratio}, data, root, {}, true));
      }
    }
  }
  return out;
}

}  // namespace vimts::harness
