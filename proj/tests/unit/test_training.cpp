#include "oracles/brute.hpp"
#include "support/capture.hpp"
#include "support/fixtures.hpp"
#include "vimts/core/metrics.hpp"
#include "vimts/errors.hpp"
#include "vimts/ops.hpp"
#include "vimts/training.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

using namespace vimts;
using namespace vimts::train;

namespace {

TrainPlan quick_plan(Stage stage, std::uint64_t seed = 1) {
  TrainPlan p;
  p.stage = stage;
  p.lr = 1e-3;
  p.batch_size = 4;
  p.max_epochs = 3;
  p.patience = 10;
  p.seed = seed;
  p.parallel = false;
  return p;
}

VimtsModel small_model(std::uint64_t seed = 0) {
  auto c = testing::desk_model_config(3, seed);
  c.enc_dim = 16;
  c.dec_dim = 16;
  c.enc_depth = 1;
  return VimtsModel(c, 0.75, 0.25);
}

}  // namespace

TEST_CASE("mask sizes and clamping") {
  CHECK(masked_count(10, 0.7) == 7);
  testing::WarningCapture warnings;
  CHECK(masked_count(2, 0.01) == 1);
  CHECK(masked_count(3, 0.99) == 2);
  CHECK(warnings.messages.size() == 2);
  CHECK_THROWS_AS(masked_count(1, 0.5), ConfigError);
}

TEST_CASE("masks are deterministic partitions of the sections") {
  for (int trial = 0; trial < 200; ++trial) {
    const int P = 2 + trial % 12;
    const auto a = sample_mask(P, 0.6, 9, static_cast<std::uint64_t>(trial), trial % 3, trial % 5);
    const auto b = sample_mask(P, 0.6, 9, static_cast<std::uint64_t>(trial), trial % 3, trial % 5);
    CHECK(a.masked == b.masked);
    CHECK(a.visible == b.visible);
    std::set<int> all(a.masked.begin(), a.masked.end());
    all.insert(a.visible.begin(), a.visible.end());
    CHECK(all.size() == static_cast<std::size_t>(P));
    CHECK(*all.begin() == 1);
    CHECK(*all.rbegin() == P);
    CHECK(a.masked.size() == static_cast<std::size_t>(masked_count(P, 0.6)));
  }
  // Different epochs usually give different masks.
  int differ = 0;
  for (int e = 0; e < 20; ++e) differ += sample_mask(9, 0.5, 1, 0, 0, e).masked != sample_mask(9, 0.5, 1, 0, 0, e + 1).masked;
  CHECK(differ > 10);
}

TEST_CASE("shared masks reuse one draw across channels") {
  const auto tasks = testing::synthetic_tasks(3, 4);
  auto model = small_model();
  auto plan = quick_plan(Stage::Ssl);
  plan.mask_sharing = MaskSharing::Shared;
  const auto in = ssl_input(model, tasks[0], plan, 2);
  CHECK(in.plans[0].targets == in.plans[1].targets);
  CHECK(in.plans[1].targets == in.plans[2].targets);
  plan.mask_sharing = MaskSharing::PerChannel;
  bool any_differ = false;
  for (int e = 0; e < 10; ++e) {
    const auto pc = ssl_input(model, tasks[0], plan, e);
    any_differ = any_differ || pc.plans[0].targets != pc.plans[1].targets;
  }
  CHECK(any_differ);
}

TEST_CASE("nested loss hand cases") {
  ad::ParameterSet ps;
  ad::Tape tape(&ps);
  auto loss_of = [&](std::vector<double> pred, std::vector<ResolvedQuery> qs, int channels) {
    ad::Matrix p(static_cast<Eigen::Index>(pred.size()), 1);
    for (std::size_t i = 0; i < pred.size(); ++i) p(static_cast<Eigen::Index>(i), 0) = pred[i];
    return nested_loss(tape, tape.constant(p), qs, channels);
  };
  CHECK(loss_of({1.0, 2.0}, {{0, 0.8, 4, 1.0}, {1, 0.9, 4, 2.0}}, 2).scalar() == 0.0);
  CHECK(loss_of({3.0}, {{0, 0.8, 4, 1.0}}, 1).scalar() == 4.0);
  // Channel 0 MSE 1 over one query, channel 1 MSE 3 over three queries.
  const auto l = loss_of({1.0, 0.0, 0.0, 0.0}, {{0, 0.8, 4, 0.0}, {1, 0.8, 4, std::sqrt(3.0)},
                                                {1, 0.8, 4, -std::sqrt(3.0)}, {1, 0.9, 4, std::sqrt(3.0)}}, 2);
  CHECK(l.scalar() == doctest::Approx(2.0));
  // Pooled MSE differs: (1 + 9) / 4.
  const std::vector<double> pp{1, 0, 0, 0}, tt{0, std::sqrt(3.0), -std::sqrt(3.0), std::sqrt(3.0)};
  CHECK(core::mse(pp, tt) ==
        doctest::Approx(2.5));
  CHECK_FALSE(loss_of({}, {}, 2).valid());
}

TEST_CASE("nested loss matches the brute-force loop on random batches") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const int channels = 1 + trial % 4;
    const std::size_t q = 1 + static_cast<std::size_t>(trial % 9);
    std::vector<double> pred(q), target(q);
    std::vector<int> chan(q);
    std::vector<ResolvedQuery> qs;
    ad::Matrix p(static_cast<Eigen::Index>(q), 1);
    for (std::size_t i = 0; i < q; ++i) {
      pred[i] = n01(rng);
      target[i] = n01(rng);
      chan[i] = static_cast<int>(rng() % static_cast<std::uint64_t>(channels));
      qs.push_back({chan[i], 0.8, 4, target[i]});
      p(static_cast<Eigen::Index>(i), 0) = pred[i];
    }
    ad::ParameterSet ps;
    ad::Tape tape(&ps);
    const double got = nested_loss(tape, tape.constant(p), qs, channels).scalar();
    CHECK(std::abs(got - oracle::nested_mse(pred, target, chan, channels)) < 1e-6);
    CHECK(std::abs(got - core::channel_mean_mse(pred, target, chan, channels)) < 1e-12);
  }
}

TEST_CASE("SSL targets are history observations inside masked sections") {
  const auto tasks = testing::synthetic_tasks(5, 2);
  auto model = small_model();
  const auto plan = quick_plan(Stage::Ssl);
  const auto& g = model.geometry();
  for (const auto& task : tasks) {
    const auto in = ssl_input(model, task, plan, 1);
    std::size_t expected = 0;
    for (int c = 0; c < 3; ++c) {
      const auto& masked = in.plans[static_cast<std::size_t>(c)].targets;
      for (const auto& o : task.history[static_cast<std::size_t>(c)]) {
        const int p = section_index(o.time, g.t_start, g.size, g.history);
        expected += std::count(masked.begin(), masked.end(), p);
      }
    }
    CHECK(in.queries.size() == expected);
    for (const auto& q : in.queries) {
      const auto& masked = in.plans[static_cast<std::size_t>(q.channel)].targets;
      CHECK(std::find(masked.begin(), masked.end(), q.section) != masked.end());
    }
  }

  // Moving an observation from a masked to a visible section drops its term.
  auto task = tasks[0];
  const auto in = ssl_input(model, task, plan, 1);
  REQUIRE_FALSE(in.queries.empty());
  const auto victim = in.queries.front();
  const auto& vis = in.plans[static_cast<std::size_t>(victim.channel)].visible;
  auto& series = task.history[static_cast<std::size_t>(victim.channel)];
  for (auto& o : series) {
    if (o.time == victim.time) o.time = g.section_start(vis.front()) + 1e-3;
  }
  std::sort(series.begin(), series.end(), [](auto& a, auto& b) { return a.time < b.time; });
  const auto moved = ssl_input(model, task, plan, 1);
  CHECK(moved.queries.size() + 1 == in.queries.size());
}

TEST_CASE("freeze policies") {
  auto model = small_model();
  auto& ps = model.params();
  const auto all = apply_freeze_policy(ps, FreezePolicy::All);
  CHECK(all.size() == static_cast<std::size_t>(ps.size()));

  const auto freeze = apply_freeze_policy(ps, FreezePolicy::Freeze);
  for (const auto& name : freeze) {
    CHECK(name.rfind("graph.", 0) != 0);
    CHECK(name.rfind("backbone.", 0) != 0);
  }
  CHECK(std::find(freeze.begin(), freeze.end(), "patchify.ttcn.fc1.weight") != freeze.end());
  CHECK(std::find(freeze.begin(), freeze.end(), "head.fc1.weight") != freeze.end());

  const auto norm = apply_freeze_policy(ps, FreezePolicy::Norm);
  for (const auto& p : ps) {
    const bool is_norm_in_backbone = p.name.rfind("backbone.", 0) == 0 && p.name.find("norm") != std::string::npos;
    const bool outside = p.name.rfind("backbone.", 0) != 0 && p.name.rfind("graph.", 0) != 0;
    CHECK(p.trainable == (is_norm_in_backbone || outside));
  }
  const auto star = apply_freeze_policy(ps, FreezePolicy::NormStar);
  CHECK(std::find(star.begin(), star.end(), "graph.gcn.0") != star.end());
  CHECK(std::find(star.begin(), star.end(), "backbone.input_proj.weight") != star.end());
  CHECK(std::find(star.begin(), star.end(), "backbone.encoder.0.attn.qkv.weight") == star.end());

  const auto attn = apply_freeze_policy(ps, FreezePolicy::Attn);
  CHECK(std::find(attn.begin(), attn.end(), "backbone.encoder.0.attn.qkv.weight") != attn.end());
  CHECK(std::find(attn.begin(), attn.end(), "backbone.encoder.0.mlp.fc1.weight") == attn.end());
  const auto mlp = apply_freeze_policy(ps, FreezePolicy::Mlp);
  CHECK(std::find(mlp.begin(), mlp.end(), "backbone.encoder.0.mlp.fc1.weight") != mlp.end());
  const auto bias = apply_freeze_policy(ps, FreezePolicy::Bias);
  CHECK(std::find(bias.begin(), bias.end(), "backbone.encoder.0.mlp.fc1.bias") != bias.end());
  CHECK(std::find(bias.begin(), bias.end(), "backbone.encoder.0.mlp.fc1.weight") == bias.end());
  CHECK_THROWS_AS(parse_policy("Everything"), ConfigError);
}

TEST_CASE("learnable period embeddings train only under NormStar and ALL") {
  auto c = testing::desk_model_config(3, 0);
  c.enc_dim = 16;
  c.dec_dim = 16;
  c.learnable_tpe = true;
  VimtsModel model(c, 0.75, 0.25);
  for (auto policy : {FreezePolicy::Norm, FreezePolicy::Freeze, FreezePolicy::Attn, FreezePolicy::Bias}) {
    CHECK_FALSE(policy_trains("backbone.enc_tpe", policy));
    CHECK_FALSE(policy_trains("backbone.dec_tpe", policy));
  }
  const auto star = apply_freeze_policy(model.params(), FreezePolicy::NormStar);
  CHECK(std::find(star.begin(), star.end(), "backbone.enc_tpe") != star.end());
  CHECK(std::find(star.begin(), star.end(), "backbone.dec_tpe") != star.end());
  CHECK(policy_trains("backbone.enc_tpe", FreezePolicy::All));
}

TEST_CASE("frozen parameters are bit-identical after training") {
  const auto tasks = testing::synthetic_tasks(12, 5);
  for (auto policy : {FreezePolicy::Norm, FreezePolicy::Freeze, FreezePolicy::Attn, FreezePolicy::NormStar}) {
    auto model = small_model(1);
    const auto before = model.params().snapshot();
    auto plan = quick_plan(Stage::Finetune);
    plan.policy = policy;
    plan.max_epochs = 2;
    const auto r = train_stage(model, plan, tasks, tasks);
    std::size_t changed = 0;
    for (int i = 0; i < model.params().size(); ++i) {
      const auto& p = model.params()[i];
      if (!policy_trains(p.name, policy)) {
        CHECK(p.value == before[static_cast<std::size_t>(i)]);
      } else if (p.value != before[static_cast<std::size_t>(i)]) {
        ++changed;
      }
    }
    CHECK(changed > 0);
    CHECK(r.trainable.size() < static_cast<std::size_t>(model.params().size()));
  }
}

TEST_CASE("zero learning rate leaves parameters and losses unchanged") {
  const auto tasks = testing::synthetic_tasks(8, 6);
  auto model = small_model(2);
  const auto before = model.params().snapshot();
  auto plan = quick_plan(Stage::Finetune);
  plan.lr = 0.0;
  plan.patience = 100;
  const auto r = train_stage(model, plan, tasks, tasks);
  for (int i = 0; i < model.params().size(); ++i) CHECK(model.params()[i].value == before[static_cast<std::size_t>(i)]);
  for (const auto& e : r.history) {
    CHECK(e.val_loss == r.history[0].val_loss);
    CHECK(e.train_loss == doctest::Approx(r.history[0].train_loss).epsilon(1e-12));
  }
}

TEST_CASE("early stopping triggers after patience non-improving epochs") {
  const auto tasks = testing::synthetic_tasks(6, 7);
  auto model = small_model(3);
  auto plan = quick_plan(Stage::Finetune);
  plan.lr = 0.0;
  plan.patience = 4;
  plan.max_epochs = 50;
  const auto r = train_stage(model, plan, tasks, tasks);
  CHECK(r.early_stopped);
  CHECK(r.history.size() == 5);
  CHECK(r.best_epoch == 1);
}

TEST_CASE("identical plans and seeds give identical loss curves") {
  const auto tasks = testing::synthetic_tasks(10, 8);
  for (auto stage : {Stage::Ssl, Stage::Finetune}) {
    auto a = small_model(4);
    auto b = small_model(4);
    const auto ra = train_stage(a, quick_plan(stage, 3), tasks, tasks);
    const auto rb = train_stage(b, quick_plan(stage, 3), tasks, tasks);
    REQUIRE(ra.history.size() == rb.history.size());
    for (std::size_t i = 0; i < ra.history.size(); ++i) {
      CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
      CHECK(ra.history[i].val_loss == rb.history[i].val_loss);
    }
  }
}

TEST_CASE("parallel batch gradients equal the serial reference bit for bit") {
  const auto tasks = testing::synthetic_tasks(9, 9);
  const auto model = small_model(5);
  std::vector<ModelInput> inputs;
  for (const auto& t : tasks) inputs.push_back(finetune_input(model, t));
  const auto serial = batch_gradients(model, inputs, p2p::HeadMode::Patch2Point, false);
  const auto parallel = batch_gradients(model, inputs, p2p::HeadMode::Patch2Point, true);
  CHECK(serial.loss == parallel.loss);
  CHECK(serial.contributing == parallel.contributing);
  for (int i = 0; i < serial.grads.size(); ++i) {
    CHECK(serial.grads.has(i) == parallel.grads.has(i));
    if (serial.grads.has(i)) CHECK(serial.grads[i] == parallel.grads[i]);
  }
}

TEST_CASE("a small step along the gradient decreases the loss") {
  const auto tasks = testing::synthetic_tasks(6, 10);
  auto model = small_model(6);
  std::vector<ModelInput> inputs;
  for (const auto& t : tasks) inputs.push_back(finetune_input(model, t));
  const auto br = batch_gradients(model, inputs, p2p::HeadMode::Patch2Point, false);
  auto& ps = model.params();
  for (int i = 0; i < ps.size(); ++i) {
    if (br.grads.has(i)) ps[i].value -= 1e-4 * br.grads[i];
  }
  CHECK(mean_loss(model, inputs, p2p::HeadMode::Patch2Point, false) < br.loss);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const auto tasks = testing::synthetic_tasks(4, 11);
  auto model = small_model(7);
  model.params()[model.params().id("head.fc2.bias")].value(0, 0) = std::nan("");
  CHECK_THROWS_WITH_AS(train_stage(model, quick_plan(Stage::Finetune), tasks, tasks),
                       doctest::Contains("parameter norms"), TrainingDivergedError);
}

TEST_CASE("evaluation pools queries and matches its own prediction rows") {
  const auto tasks = testing::synthetic_tasks(6, 12);
  const auto model = small_model(8);
  std::vector<PredictionRow> rows;
  const auto m = evaluate(model, tasks, p2p::HeadMode::Patch2Point, &rows);
  CHECK(m.n_queries == rows.size());
  double se = 0.0;
  double ae = 0.0;
  for (const auto& r : rows) {
    se += (r.prediction - r.target) * (r.prediction - r.target);
    ae += std::abs(r.prediction - r.target);
  }
  CHECK(m.mse == doctest::Approx(se / rows.size()).epsilon(1e-12));
  CHECK(m.mae == doctest::Approx(ae / rows.size()).epsilon(1e-12));
  const auto serial = evaluate(model, tasks, p2p::HeadMode::Patch2Point, nullptr, false);
  CHECK(serial.mse == m.mse);
  CHECK_THROWS(evaluate(model, {}, p2p::HeadMode::Patch2Point));
}

TEST_CASE("baselines") {
  core::ForecastTask t;
  t.sample_id = "x";
  t.history = {{{0.1, 1.0}, {0.5, 3.0}}, {}};
  t.queries = {{{0.8, 2.0}}, {{0.9, 7.0}}};
  const std::vector<double> fallback{0.0, 5.0};
  const auto locf = evaluate_baseline(Baseline::Locf, {t}, fallback);
  CHECK(locf.mse == doctest::Approx((1.0 + 4.0) / 2));
  const auto mean = evaluate_baseline(Baseline::ChannelMean, {t}, fallback);
  CHECK(mean.mse == doctest::Approx((0.0 + 4.0) / 2));
  const auto zero = evaluate_baseline(Baseline::Locf, {core::ForecastTask{0, "z", {{{0.1, 0.0}}}, {{{0.9, 0.0}}}}},
                                      std::vector<double>{0.0});
  CHECK(zero.mse == 0.0);
  CHECK(training_channel_means({t}, 2) == std::vector<double>{2.0, 0.0});
}
