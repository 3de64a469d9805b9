#include "oracles/brute.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "vimts/ops.hpp"
#include "vimts/patch2point.hpp"
#include "vimts/training.hpp"

#include <doctest.h>

#include <random>

using namespace vimts;
using core::Observation;

namespace {

std::vector<std::vector<Observation>> toy_history() {
  return {{{0.05, 0.3}, {0.3, -0.2}, {0.6, 0.9}}, {{0.12, 1.1}, {0.7, 0.4}}};
}

}  // namespace

TEST_CASE("match_patch_index boundaries") {
  CHECK(p2p::match_patch_index(0.0, 0.0, 1.0, 4) == 1);
  CHECK(p2p::match_patch_index(1.0, 0.0, 1.0, 4) == 2);
  CHECK(p2p::match_patch_index(4.0, 0.0, 1.0, 4) == 4);
  CHECK_THROWS_AS(p2p::match_patch_index(4.0001, 0.0, 1.0, 4), std::out_of_range);
  CHECK_THROWS_AS(p2p::match_patch_index(-0.1, 0.0, 1.0, 4), std::out_of_range);
}

TEST_CASE("match_patch_index satisfies the interval predicate on random times") {
  std::mt19937_64 rng(3);
  for (double s : {1.0 / 12.0, 0.1, 0.125, 1.0 / 3.0}) {
    const int total = static_cast<int>(std::ceil(1.0 / s - 1e-9));
    std::uniform_real_distribution<double> t(0.0, total * s);
    for (int i = 0; i < 1000; ++i) {
      const double q = t(rng);
      const int p = p2p::match_patch_index(q, 0.0, s, total);
      CHECK(q >= (p - 1) * s);
      CHECK(q < p * s);
    }
  }
}

TEST_CASE("query head matches a brute-force two-layer perceptron") {
  for (int trial = 0; trial < 100; ++trial) {
    ad::ParameterSet ps;
    std::mt19937_64 rng(static_cast<std::uint64_t>(trial));
    const int te = 1 + trial % 5;
    const int dd = 1 + trial % 7;
    p2p::QueryHead head(ps, te, dd, 1 + trial % 6, rng);
    for (auto& p : ps) p.value.setRandom();
    patchify::TimeEmbedParams tp;
    std::uniform_real_distribution<double> u(-2, 2);
    for (int d = 0; d < te; ++d) {
      tp.omega.push_back(u(rng));
      tp.alpha.push_back(u(rng));
    }
    std::vector<double> z(static_cast<std::size_t>(dd));
    for (auto& v : z) v = u(rng);
    const double t = u(rng);
    const double got = p2p::predict_point(t, z, tp, ps, head);

    auto in = patchify::time_embed(t, tp);
    in.insert(in.end(), z.begin(), z.end());
    const oracle::Mat x{in};
    const auto h = oracle::apply(oracle::linear(x, ps, "head.fc1"), oracle::relu);
    const double want = oracle::linear(h, ps, "head.fc2")[0][0];
    CHECK(std::abs(got - want) < 1e-6);
  }
}

TEST_CASE("zero head weights predict the output bias") {
  ad::ParameterSet ps;
  std::mt19937_64 rng(1);
  p2p::QueryHead head(ps, 2, 3, 4, rng);
  ps[ps.id("head.fc1.weight")].value.setZero();
  ps[ps.id("head.fc2.weight")].value.setZero();
  ps[ps.id("head.fc2.bias")].value.setConstant(0.37);
  const patchify::TimeEmbedParams tp{{1, 2}, {0, 0}};
  const std::vector<double> z{1, 2, 3};
  CHECK(p2p::predict_point(0.1, z, tp, ps, head) == 0.37);
  CHECK(p2p::predict_point(0.9, z, tp, ps, head) == 0.37);
}

TEST_CASE("batched prediction agrees with one query at a time") {
  VimtsModel model(testing::minimal_model_config(3), 0.75, 0.25);
  const auto hist = toy_history();
  std::vector<Query> qs{{0, 0.8, 0}, {1, 0.95, 0}, {0, 0.75, 0}, {1, 1.0, 0}, {0, 0.8, 0}};
  const auto batched = model.predict(hist, qs);
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const auto single = model.predict(hist, {qs[i]});
    CHECK(std::abs(single[0] - batched[i]) < 1e-6);
  }
  CHECK(batched[0] == batched[4]);  // duplicate query

  std::vector<Query> reversed(qs.rbegin(), qs.rend());
  const auto r = model.predict(hist, reversed);
  for (std::size_t i = 0; i < qs.size(); ++i) CHECK(r[qs.size() - 1 - i] == batched[i]);
}

TEST_CASE("prediction errors") {
  VimtsModel model(testing::minimal_model_config(), 0.75, 0.25);
  const auto hist = toy_history();
  CHECK_THROWS_AS(model.predict(hist, {{0, 0.5, 0}}), std::out_of_range);
  CHECK_THROWS_AS(model.predict(hist, {{0, -0.1, 0}}), std::out_of_range);
  CHECK_THROWS_AS(model.predict({{}, {}}, {{0, 0.8, 0}}), std::invalid_argument);
}

TEST_CASE("a query depends only on its own section's reconstruction") {
  auto cfg = testing::minimal_model_config(4);
  cfg.section_size = 0.125;  // P = 6, two forecast sections
  VimtsModel model(cfg, 0.75, 0.25);
  const auto in = model.forecast_input(toy_history(), {{0, 0.8, 0}, {0, 0.9, 0}});
  ad::Tape tape(&model.params());
  const auto pred = model.forward(tape, in, p2p::HeadMode::Patch2Point);
  // Recompute the first query from its own row after zeroing section 8's row.
  CHECK(in.queries[0].section == 7);
  CHECK(in.queries[1].section == 8);
  const auto z_only = [&](int which) {
    ad::Tape t(&model.params());
    const auto grid = model.patchify().assemble(t, patchify::divide_sections(in.history, model.geometry(), 6), 6);
    const auto h = model.graph().compensate(t, grid.features, 6);
    const auto tokens = model.backbone().embed_inputs(t, h, 2);
    ad::Matrix z = model.backbone().reconstruct(t, tokens, 2, in.plans).value();
    z.row(which).setZero();  // row 1 is (channel 0, section 8)
    std::vector<double> times{in.queries[0].time};
    const auto te = model.patchify().time_embed(t, times);
    return model.head().forward(t, te, t.constant(z.row(0))).scalar();
  };
  CHECK(z_only(1) == pred.value()(0, 0));
}

TEST_CASE("predictions are continuous inside a section") {
  VimtsModel model(testing::minimal_model_config(5), 0.75, 0.25);
  const auto hist = toy_history();
  std::vector<Query> qs;
  for (int i = 0; i <= 200; ++i) qs.push_back({0, 0.75 + 0.25 * i / 200.0, 0});
  const auto p = model.predict(hist, qs);
  double lipschitz = 0.0;
  for (std::size_t i = 1; i < p.size(); ++i) lipschitz = std::max(lipschitz, std::abs(p[i] - p[i - 1]) / (0.25 / 200.0));
  CHECK(lipschitz < 1e4);
}

TEST_CASE("direct projection head reads the bin holding the query") {
  VimtsModel model(testing::minimal_model_config(6), 0.75, 0.25);
  const auto& head = model.projection_head();
  CHECK(head.bin_of(0.75, 0.75, 0.25) == 0);
  CHECK(head.bin_of(0.8124, 0.75, 0.25) == 0);
  CHECK(head.bin_of(0.8126, 0.75, 0.25) == 1);
  CHECK(head.bin_of(1.0, 0.75, 0.25) == 3);
  const auto hist = toy_history();
  const auto a = model.predict(hist, {{0, 0.76, 0}, {0, 0.80, 0}, {0, 0.9, 0}}, p2p::HeadMode::DirectProjection);
  CHECK(a[0] == a[1]);
  CHECK(a[0] != a[2]);
}

TEST_CASE("end-to-end gradients match finite differences on the minimal config") {
  VimtsModel model(testing::minimal_model_config(7), 0.75, 0.25);
  const auto in = model.forecast_input(toy_history(), {{0, 0.8, 0.5}, {1, 0.9, -0.3}, {1, 0.99, 0.1}});
  auto r = testing::gradcheck(model.params(), [&](ad::Tape& tape) {
    return train::nested_loss(tape, model.forward(tape, in, p2p::HeadMode::Patch2Point), in.queries, 2);
  });
  INFO(r.worst);
  CHECK(r.max_rel_error <= 1e-3);
}

TEST_CASE("forward outputs are deterministic") {
  VimtsModel a(testing::minimal_model_config(8), 0.75, 0.25);
  VimtsModel b(testing::minimal_model_config(8), 0.75, 0.25);
  const std::vector<Query> qs{{0, 0.8, 0}, {1, 0.9, 0}};
  CHECK(a.predict(toy_history(), qs) == b.predict(toy_history(), qs));
}

TEST_CASE("swapping two channels permutes the forecast bit for bit") {
  auto config = testing::desk_model_config(2, 31);
  config.enc_dim = 16;
  config.dec_dim = 16;
  const auto tasks = testing::synthetic_tasks(5, 32, 2, 0.5);
  VimtsModel model(config, 0.75, 0.25);
  VimtsModel swapped(config, 0.75, 0.25);
  auto& sp = swapped.params();
  sp[swapped.patchify().channel_table()].value.row(0).swap(sp[swapped.patchify().channel_table()].value.row(1));
  for (int k = 1; k <= 2; ++k) {
    auto& s = sp[swapped.graph().static_dict(k)].value;
    s.row(0).swap(s.row(1));
  }
  for (const auto& task : tasks) {
    std::vector<Query> qs, qs_swapped;
    for (int c = 0; c < 2; ++c)
      for (const auto& o : task.queries[static_cast<std::size_t>(c)]) {
        qs.push_back({c, o.time});
        qs_swapped.push_back({1 - c, o.time});
      }
    if (qs.empty()) continue;
    auto history = task.history;
    std::swap(history[0], history[1]);
    const auto a = model.predict(task.history, qs);
    const auto b = swapped.predict(history, qs_swapped);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
}
