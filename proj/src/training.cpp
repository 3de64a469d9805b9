#include "vimts/training.hpp"

#include "vimts/core/metrics.hpp"
#include "vimts/errors.hpp"
#include "vimts/log.hpp"
#include "vimts/ops.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace vimts::train {
using nlohmann::json;

namespace {

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }
bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}
bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto p : parts) h = splitmix(h ^ p);
  return h;
}

}  // namespace

Stage parse_stage(const std::string& name) {
  if (name == "ssl") return Stage::Ssl;
  if (name == "finetune") return Stage::Finetune;
  throw ConfigError("unknown stage '" + name + "'");
}
std::string stage_name(Stage stage) { return stage == Stage::Ssl ? "ssl" : "finetune"; }

FreezePolicy parse_policy(const std::string& name) {
  static const std::map<std::string, FreezePolicy> names{
      {"ALL", FreezePolicy::All},   {"Attn", FreezePolicy::Attn}, {"Bias", FreezePolicy::Bias},
      {"Freeze", FreezePolicy::Freeze}, {"MLP", FreezePolicy::Mlp}, {"Norm", FreezePolicy::Norm},
      {"NormStar", FreezePolicy::NormStar}};
  const auto it = names.find(name);
  if (it == names.end()) throw ConfigError("unknown freeze policy '" + name + "'");
  return it->second;
}

std::string policy_name(FreezePolicy policy) {
  switch (policy) {
    case FreezePolicy::All: return "ALL";
    case FreezePolicy::Attn: return "Attn";
    case FreezePolicy::Bias: return "Bias";
    case FreezePolicy::Freeze: return "Freeze";
    case FreezePolicy::Mlp: return "MLP";
    case FreezePolicy::Norm: return "Norm";
    case FreezePolicy::NormStar: return "NormStar";
  }
  return "ALL";
}

MaskSharing parse_mask_sharing(const std::string& name) {
  if (name == "per_channel") return MaskSharing::PerChannel;
  if (name == "shared") return MaskSharing::Shared;
  throw ConfigError("unknown mask sharing '" + name + "'");
}
std::string mask_sharing_name(MaskSharing s) { return s == MaskSharing::PerChannel ? "per_channel" : "shared"; }

TrainPlan TrainPlan::from_json(const json& j) {
  TrainPlan p;
  p.stage = parse_stage(j.value("stage", stage_name(p.stage)));
  p.mask_ratio = j.value("mask_ratio", p.mask_ratio);
  p.mask_sharing = parse_mask_sharing(j.value("mask_sharing", mask_sharing_name(p.mask_sharing)));
  p.policy = parse_policy(j.value("freeze_policy", policy_name(p.policy)));
  p.lr = j.value("lr", p.lr);
  p.batch_size = j.value("batch_size", p.batch_size);
  p.patience = j.value("patience", p.patience);
  p.max_epochs = j.value("max_epochs", p.max_epochs);
  p.max_steps = j.value("max_steps", p.max_steps);
  p.seed = j.value("seed", p.seed);
  p.head_mode = p2p::parse_head_mode(j.value("head_mode", p2p::head_mode_name(p.head_mode)));
  p.clip_norm = j.value("clip_norm", p.clip_norm);
  p.parallel = j.value("parallel", p.parallel);
  p.validate();
  return p;
}

json TrainPlan::to_json() const {
  return json{{"stage", stage_name(stage)},
              {"mask_ratio", mask_ratio},
              {"mask_sharing", mask_sharing_name(mask_sharing)},
              {"freeze_policy", policy_name(policy)},
              {"lr", lr},
              {"batch_size", batch_size},
              {"patience", patience},
              {"max_epochs", max_epochs},
              {"max_steps", max_steps},
              {"seed", seed},
              {"head_mode", p2p::head_mode_name(head_mode)},
              {"clip_norm", clip_norm},
              {"parallel", parallel}};
}

void TrainPlan::validate() const {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("plan: mask_ratio must be in [0,1)");
  if (!(lr >= 0.0)) throw ConfigError("plan: lr must be non-negative");
  if (batch_size < 1) throw ConfigError("plan: batch_size must be >= 1");
  if (patience < 1) throw ConfigError("plan: patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("plan: max_epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("plan: max_steps must be >= 0");
  if (!(clip_norm > 0.0)) throw ConfigError("plan: clip_norm must be positive");
}

int masked_count(int sections, double ratio) {
  if (sections < 2) throw ConfigError("masking needs at least two history sections");
  const int raw = static_cast<int>(std::lround(ratio * sections));
  const int clamped = std::clamp(raw, 1, sections - 1);
  if (clamped != raw) {
    log::warn("mask ratio " + std::to_string(ratio) + " over " + std::to_string(sections) + " sections gives " +
              std::to_string(raw) + " masked; clamped to " + std::to_string(clamped));
  }
  return clamped;
}

MaskDraw sample_mask(int sections, double ratio, std::uint64_t seed, std::uint64_t sample, int channel, int epoch) {
  const int m = masked_count(sections, ratio);
  std::mt19937_64 rng(mix({seed, sample, static_cast<std::uint64_t>(static_cast<std::int64_t>(channel)),
                           static_cast<std::uint64_t>(static_cast<std::int64_t>(epoch))}));
  std::vector<int> order(static_cast<std::size_t>(sections));
  std::iota(order.begin(), order.end(), 1);
  // Partial Fisher-Yates: the first m entries are the masked set.
  for (int i = 0; i < m; ++i) {
    std::uniform_int_distribution<int> pick(i, sections - 1);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
  }
  MaskDraw d;
  d.masked.assign(order.begin(), order.begin() + m);
  d.visible.assign(order.begin() + m, order.end());
  std::sort(d.masked.begin(), d.masked.end());
  std::sort(d.visible.begin(), d.visible.end());
  return d;
}

bool policy_trains(const std::string& name, FreezePolicy policy) {
  if (policy == FreezePolicy::All) return true;
  if (starts_with(name, "graph.")) return policy == FreezePolicy::NormStar;
  if (!starts_with(name, "backbone.")) return true;
  if (ends_with(name, "enc_tpe") || ends_with(name, "dec_tpe")) return policy == FreezePolicy::NormStar;
  switch (policy) {
    case FreezePolicy::Attn: return contains(name, ".attn.");
    case FreezePolicy::Bias: return ends_with(name, ".bias");
    case FreezePolicy::Mlp: return contains(name, ".mlp.");
    case FreezePolicy::Norm: return contains(name, "norm");
    case FreezePolicy::NormStar: return contains(name, "norm") || contains(name, ".input_proj.");
    default: return false;
  }
}

std::vector<std::string> apply_freeze_policy(ad::ParameterSet& params, FreezePolicy policy) {
  std::vector<std::string> names;
  for (auto& p : params) {
    p.trainable = policy_trains(p.name, policy);
    if (p.trainable) names.push_back(p.name);
  }
  return names;
}

ModelInput ssl_input(const VimtsModel& model, const core::ForecastTask& task, const TrainPlan& plan, int epoch) {
  const auto& g = model.geometry();
  const int channels = model.config().channels;
  ModelInput in;
  in.history = task.history;
  for (int c = 0; c < channels; ++c) {
    const int mask_channel = plan.mask_sharing == MaskSharing::Shared ? -1 : c;
    const auto draw = sample_mask(g.history, plan.mask_ratio, plan.seed, task.sample_index, mask_channel, epoch);
    for (const auto& o : task.history[static_cast<std::size_t>(c)]) {
      const int p = section_index(o.time, g.t_start, g.size, g.history);
      if (std::binary_search(draw.masked.begin(), draw.masked.end(), p)) {
        in.queries.push_back(ResolvedQuery{c, o.time, p, o.value});
      }
    }
    in.plans.push_back(backbone::SequencePlan{c, draw.visible, draw.masked});
  }
  return in;
}

ModelInput finetune_input(const VimtsModel& model, const core::ForecastTask& task) {
  std::vector<Query> queries;
  for (int c = 0; c < task.channels(); ++c) {
    for (const auto& q : task.queries[static_cast<std::size_t>(c)]) queries.push_back(Query{c, q.time, q.value});
  }
  return model.forecast_input(task.history, queries);
}

ad::Var nested_loss(ad::Tape& tape, ad::Var predictions, std::span<const ResolvedQuery> queries, int channels) {
  std::vector<int> counts(static_cast<std::size_t>(channels), 0);
  for (const auto& q : queries) ++counts[static_cast<std::size_t>(q.channel)];
  const auto active = std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; });
  if (active == 0) return {};
  ad::Matrix targets(static_cast<Eigen::Index>(queries.size()), 1);
  ad::Matrix weights(static_cast<Eigen::Index>(queries.size()), 1);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    targets(ii, 0) = queries[i].target;
    weights(ii, 0) = 1.0 / (static_cast<double>(counts[static_cast<std::size_t>(queries[i].channel)]) *
                            static_cast<double>(active));
  }
  return ad::weighted_sum(ad::square(ad::sub(predictions, tape.constant(std::move(targets)))), weights);
}

Adam::Adam(const ad::ParameterSet& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& p : params) {
    m_.push_back(ad::Matrix::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(ad::Matrix::Zero(p.value.rows(), p.value.cols()));
  }
}

void Adam::step(ad::ParameterSet& params, const ad::Gradients& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (ad::ParamId id = 0; id < params.size(); ++id) {
    auto& p = params[id];
    if (!p.trainable || !grads.has(id)) continue;
    const auto& g = grads[id];
    auto& m = m_[static_cast<std::size_t>(id)];
    auto& v = v_[static_cast<std::size_t>(id)];
    m = b1_ * m + (1.0 - b1_) * g;
    v = b2_ * v + (1.0 - b2_) * g.cwiseProduct(g);
    p.value.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

BatchResult batch_gradients(const VimtsModel& model, std::span<const ModelInput> inputs, p2p::HeadMode mode,
                            bool parallel) {
  const auto n = static_cast<int>(inputs.size());
  const auto& params = model.params();
  std::vector<ad::Gradients> slots(inputs.size());
  std::vector<double> losses(inputs.size(), 0.0);
  std::vector<char> used(inputs.size(), 0);
  auto one = [&](int i) {
    const auto& in = inputs[static_cast<std::size_t>(i)];
    if (in.queries.empty()) return;
    ad::Tape tape(&params);
    const ad::Var pred = model.forward(tape, in, mode);
    const ad::Var loss = nested_loss(tape, pred, in.queries, model.config().channels);
    if (!loss.valid()) return;
    tape.backward(loss);
    slots[static_cast<std::size_t>(i)] = ad::Gradients(params);
    tape.collect(slots[static_cast<std::size_t>(i)]);
    losses[static_cast<std::size_t>(i)] = loss.scalar();
    used[static_cast<std::size_t>(i)] = 1;
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (int i = 0; i < n; ++i) one(i);
  } else {
    for (int i = 0; i < n; ++i) one(i);
  }
  BatchResult out;
  out.grads = ad::Gradients(params);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!used[i]) continue;
    out.grads.add(slots[i]);
    out.loss += losses[i];
    ++out.contributing;
  }
  if (out.contributing > 0) {
    out.grads.scale(1.0 / out.contributing);
    out.loss /= out.contributing;
  }
  return out;
}

double mean_loss(const VimtsModel& model, std::span<const ModelInput> inputs, p2p::HeadMode mode, bool parallel) {
  const auto n = static_cast<int>(inputs.size());
  std::vector<double> losses(inputs.size(), std::nan(""));
  auto one = [&](int i) {
    const auto& in = inputs[static_cast<std::size_t>(i)];
    if (in.queries.empty()) return;
    ad::Tape tape(&model.params());
    const ad::Var loss = nested_loss(tape, model.forward(tape, in, mode), in.queries, model.config().channels);
    if (loss.valid()) losses[static_cast<std::size_t>(i)] = loss.scalar();
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (int i = 0; i < n; ++i) one(i);
  } else {
    for (int i = 0; i < n; ++i) one(i);
  }
  double sum = 0.0;
  int count = 0;
  for (double l : losses) {
    if (std::isnan(l)) continue;
    sum += l;
    ++count;
  }
  return count == 0 ? std::nan("") : sum / count;
}

namespace {

std::string parameter_norms(const ad::ParameterSet& params) {
  std::ostringstream os;
  int shown = 0;
  for (const auto& p : params) {
    if (shown++ >= 12) break;
    os << (shown > 1 ? ", " : "") << p.name << "=" << p.value.norm();
  }
  return os.str();
}

std::vector<ModelInput> stage_inputs(const VimtsModel& model, const TrainPlan& plan,
                                     const std::vector<core::ForecastTask>& tasks, int epoch) {
  std::vector<ModelInput> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) {
    out.push_back(plan.stage == Stage::Ssl ? ssl_input(model, t, plan, epoch) : finetune_input(model, t));
  }
  return out;
}

}  // namespace

StageResult train_stage(VimtsModel& model, const TrainPlan& plan, const std::vector<core::ForecastTask>& train,
                        const std::vector<core::ForecastTask>& val, const EpochCallback& on_epoch) {
  plan.validate();
  if (train.empty()) throw ConfigError("train_stage: empty training set");
  auto& params = model.params();
  StageResult result;
  result.trainable = apply_freeze_policy(params, plan.policy);
  Adam adam(params, plan.lr);

  // Finetune inputs never change; SSL inputs are redrawn every epoch.
  std::vector<ModelInput> fixed_train;
  if (plan.stage == Stage::Finetune) fixed_train = stage_inputs(model, plan, train, 0);
  const std::vector<ModelInput> val_inputs = stage_inputs(model, plan, val.empty() ? train : val, 0);

  double best = std::numeric_limits<double>::infinity();
  std::vector<ad::Matrix> best_snapshot = params.snapshot();
  int wait = 0;
  bool stop = false;
  for (int epoch = 1; epoch <= plan.max_epochs && !stop; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<ModelInput> epoch_inputs;
    if (plan.stage == Stage::Ssl) epoch_inputs = stage_inputs(model, plan, train, epoch);
    const auto& inputs = plan.stage == Stage::Ssl ? epoch_inputs : fixed_train;

    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix({plan.seed, 0x5eedULL, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    int loss_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(plan.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(plan.batch_size));
      std::vector<ModelInput> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(inputs[order[i]]);
      const auto br = batch_gradients(model, batch, plan.head_mode, plan.parallel);
      if (br.contributing == 0) {
        log::warn("batch " + std::to_string(start / static_cast<std::size_t>(plan.batch_size)) + " of epoch " +
                  std::to_string(epoch) + " has no targets; skipped");
        continue;
      }
      if (!std::isfinite(br.loss)) {
        throw TrainingDivergedError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(start / static_cast<std::size_t>(plan.batch_size)) +
                                    "; parameter norms: " + parameter_norms(params));
      }
      ad::Gradients grads = br.grads;
      const double norm = grads.global_norm();
      if (norm > plan.clip_norm) grads.scale(plan.clip_norm / norm);
      adam.step(params, grads);
      loss_sum += br.loss;
      ++loss_batches;
      ++result.steps;
      if (plan.max_steps > 0 && result.steps >= plan.max_steps) {
        stop = true;
        break;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_batches ? loss_sum / loss_batches : std::nan("");
    rec.val_loss = mean_loss(model, val_inputs, plan.head_mode, plan.parallel);
    if (std::isnan(rec.val_loss)) rec.val_loss = rec.train_loss;
    if (!std::isfinite(rec.val_loss)) {
      throw TrainingDivergedError("non-finite validation loss at epoch " + std::to_string(epoch) +
                                  "; parameter norms: " + parameter_norms(params));
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < best) {
      best = rec.val_loss;
      best_snapshot = params.snapshot();
      result.best_epoch = epoch;
      wait = 0;
    } else if (++wait >= plan.patience) {
      result.early_stopped = true;
      stop = true;
    }
  }
  params.restore(best_snapshot);
  result.best_val = best;
  return result;
}

json MetricsReport::to_json() const {
  json per = json::array();
  for (const auto& c : per_channel) per.push_back({{"channel", c.channel}, {"mse", c.mse}, {"mae", c.mae}, {"n", c.n}});
  return json{{"mse", mse}, {"mae", mae}, {"channel_mean_mse", channel_mean_mse}, {"n_queries", n_queries},
              {"per_channel", per}};
}

MetricsReport metrics_from_rows(std::span<const PredictionRow> rows, int channels) {
  if (rows.empty()) throw std::invalid_argument("evaluate: no queries to score");
  std::vector<double> preds;
  std::vector<double> targets;
  std::vector<int> chans;
  for (const auto& r : rows) {
    preds.push_back(r.prediction);
    targets.push_back(r.target);
    chans.push_back(r.channel);
  }
  MetricsReport m;
  m.mse = core::mse(preds, targets);
  m.mae = core::mae(preds, targets);
  m.channel_mean_mse = core::channel_mean_mse(preds, targets, chans, channels);
  m.n_queries = rows.size();
  for (int c = 0; c < channels; ++c) {
    std::vector<double> p;
    std::vector<double> t;
    for (const auto& r : rows) {
      if (r.channel != c) continue;
      p.push_back(r.prediction);
      t.push_back(r.target);
    }
    if (p.empty()) continue;
    m.per_channel.push_back(ChannelMetrics{c, core::mse(p, t), core::mae(p, t), p.size()});
  }
  return m;
}

MetricsReport evaluate(const VimtsModel& model, const std::vector<core::ForecastTask>& tasks, p2p::HeadMode mode,
                       std::vector<PredictionRow>* rows, bool parallel) {
  if (tasks.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<std::vector<PredictionRow>> per_task(tasks.size());
  const auto n = static_cast<int>(tasks.size());
  auto one = [&](int i) {
    const auto& task = tasks[static_cast<std::size_t>(i)];
    const ModelInput in = finetune_input(model, task);
    if (in.queries.empty()) return;
    ad::Tape tape(&model.params());
    const ad::Matrix& pred = model.forward(tape, in, mode).value();
    auto& out = per_task[static_cast<std::size_t>(i)];
    for (std::size_t q = 0; q < in.queries.size(); ++q) {
      const auto& rq = in.queries[q];
      out.push_back(PredictionRow{task.sample_id, rq.channel, rq.time, pred(static_cast<Eigen::Index>(q), 0), rq.target});
    }
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (int i = 0; i < n; ++i) one(i);
  } else {
    for (int i = 0; i < n; ++i) one(i);
  }
  std::vector<PredictionRow> all;
  for (auto& t : per_task) all.insert(all.end(), t.begin(), t.end());
  auto report = metrics_from_rows(all, model.config().channels);
  if (rows) *rows = std::move(all);
  return report;
}

std::string baseline_name(Baseline b) { return b == Baseline::Locf ? "locf" : "channel_mean"; }

std::vector<double> training_channel_means(const std::vector<core::ForecastTask>& train, int channels) {
  std::vector<double> sum(static_cast<std::size_t>(channels), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(channels), 0);
  for (const auto& t : train) {
    for (int c = 0; c < channels; ++c) {
      for (const auto& o : t.history[static_cast<std::size_t>(c)]) {
        sum[static_cast<std::size_t>(c)] += o.value;
        ++count[static_cast<std::size_t>(c)];
      }
    }
  }
  for (std::size_t c = 0; c < sum.size(); ++c) sum[c] = count[c] ? sum[c] / static_cast<double>(count[c]) : 0.0;
  return sum;
}

MetricsReport evaluate_baseline(Baseline kind, const std::vector<core::ForecastTask>& tasks,
                                const std::vector<double>& fallback, std::vector<PredictionRow>* rows) {
  if (tasks.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<PredictionRow> all;
  const int channels = static_cast<int>(fallback.size());
  for (const auto& task : tasks) {
    for (int c = 0; c < channels; ++c) {
      const auto& h = task.history[static_cast<std::size_t>(c)];
      double value = fallback[static_cast<std::size_t>(c)];
      if (!h.empty()) {
        if (kind == Baseline::Locf) {
          value = h.back().value;
        } else {
          double s = 0.0;
          for (const auto& o : h) s += o.value;
          value = s / static_cast<double>(h.size());
        }
      }
      for (const auto& q : task.queries[static_cast<std::size_t>(c)]) {
        all.push_back(PredictionRow{task.sample_id, c, q.time, value, q.value});
      }
    }
  }
  auto report = metrics_from_rows(all, channels);
  if (rows) *rows = std::move(all);
  return report;
}

}  // namespace vimts::train
