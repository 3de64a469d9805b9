#include "support/capture.hpp"
#include "vimts/core/dataset_io.hpp"
#include "vimts/core/forecast_task.hpp"
#include "vimts/core/metrics.hpp"
#include "vimts/core/normalizer.hpp"
#include "vimts/core/splits.hpp"
#include "vimts/core/synthetic.hpp"
#include "vimts/errors.hpp"
#include "vimts/fileio.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

using namespace vimts;
using namespace vimts::core;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vimts_core_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

DatasetSchema two_channel_schema() {
  DatasetSchema s;
  s.channel_names = {"ch0", "ch1"};
  s.channel_count = 2;
  s.obs_span = 0.75;
  s.horizon_span = 0.25;
  return s;
}

void check_mask_consistency(const ImtsDataset& ds) {
  for (const auto& s : ds.samples) {
    for (std::size_t l = 0; l < s.length(); ++l) {
      bool any = false;
      for (int n = 0; n < s.channels(); ++n) {
        const double v = s.values()[l * static_cast<std::size_t>(s.channels()) + static_cast<std::size_t>(n)];
        CHECK(s.observed(l, n) == !std::isnan(v));
        any = any || s.observed(l, n);
      }
      CHECK(any);
    }
  }
}

}  // namespace

TEST_CASE("loading merges rows sharing a timestamp") {
  const auto dir = temp_dir("load");
  write_text(dir / "a.csv", "sample_id,channel_id,timestamp,value\ns0,ch0,0.0,1.0\ns0,ch1,0.5,2.0\n");
  const auto ds = load_dataset(dir / "a.csv", two_channel_schema());
  REQUIRE(ds.size() == 1);
  const auto& s = ds.samples[0];
  CHECK(s.length() == 2);
  CHECK(s.channels() == 2);
  CHECK(s.observed(0, 0));
  CHECK_FALSE(s.observed(0, 1));
  CHECK_FALSE(s.observed(1, 0));
  CHECK(s.observed(1, 1));
  CHECK(s.value(1, 1) == 2.0);
}

TEST_CASE("empty file gives an empty dataset with the schema's channels") {
  const auto dir = temp_dir("empty");
  write_text(dir / "e.csv", "sample_id,channel_id,timestamp,value\n");
  const auto ds = load_dataset(dir / "e.csv", two_channel_schema());
  CHECK(ds.empty());
  CHECK(ds.channel_count == 2);
}

TEST_CASE("duplicate keys deduplicate and conflicts throw") {
  const auto dir = temp_dir("dup");
  const std::string text =
      "sample_id,channel_id,timestamp,value\ns0,ch0,0.0,1.0\ns0,ch0,0.0,1.0\ns0,ch1,0.25,3.0\n";
  write_text(dir / "d.csv", text);
  const auto ds = load_dataset(dir / "d.csv", two_channel_schema());
  // Independent count of unique (sample, channel, time) keys.
  std::set<std::string> keys;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) keys.insert(line.substr(0, line.rfind(',')));
  CHECK(ds.samples[0].observation_count() == keys.size());

  write_text(dir / "c.csv", "sample_id,channel_id,timestamp,value\ns0,ch0,0.0,1.0\ns0,ch0,0.0,2.0\n");
  CHECK_THROWS_AS(load_dataset(dir / "c.csv", two_channel_schema()), DataConflictError);
}

TEST_CASE("malformed rows name their line") {
  const auto dir = temp_dir("bad");
  write_text(dir / "b.csv", "sample_id,channel_id,timestamp,value\ns0,ch0,0.0,1.0\ns0,ch0,abc,1.0\n");
  try {
    load_dataset(dir / "b.csv", two_channel_schema());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("queries from is_query rows and sibling files") {
  const auto dir = temp_dir("queries");
  write_text(dir / "q.csv",
             "sample_id,channel_id,timestamp,value,is_query\ns0,ch0,0.1,1.0,0\ns0,ch1,0.9,4.0,1\n");
  const auto a = load_dataset(dir / "q.csv", two_channel_schema());
  CHECK(a.samples[0].query_count() == 1);
  CHECK(a.samples[0].queries()[1][0] == Observation{0.9, 4.0});

  write_text(dir / "s.csv", "sample_id,channel_id,timestamp,value\ns0,ch0,0.1,1.0\n");
  write_text(queries_path_for(dir / "s.csv"), "sample_id,channel_id,timestamp,value\ns0,ch1,0.9,4.0\n");
  const auto b = load_dataset(dir / "s.csv", two_channel_schema());
  CHECK(b.samples[0].queries() == a.samples[0].queries());
}

TEST_CASE("write then load round-trips a generated dataset") {
  SyntheticConfig sc;
  sc.samples = 12;
  const auto data = generate_synthetic(sc, 3);
  const auto dir = temp_dir("roundtrip");
  write_dataset(data.dataset, dir / "syn.csv");
  DatasetSchema schema;
  schema.channel_names = data.dataset.channel_names;
  schema.channel_count = data.dataset.channel_count;
  const auto back = load_dataset(dir / "syn.csv", schema);
  REQUIRE(back.size() == data.dataset.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back.samples[i].timestamps() == data.dataset.samples[i].timestamps());
    CHECK(back.samples[i].mask() == data.dataset.samples[i].mask());
    CHECK(back.samples[i].queries() == data.dataset.samples[i].queries());
    for (int n = 0; n < back.channel_count; ++n)
      CHECK(back.samples[i].channel_series(n) == data.dataset.samples[i].channel_series(n));
  }
}

TEST_CASE("wide CSV conversion") {
  const auto dir = temp_dir("wide");
  write_text(dir / "w.csv", "sample_id,timestamp,hr,temp\ns0,0.0,60,\ns0,0.5,,37.5\n");
  const auto names = convert_wide_csv(dir / "w.csv", dir / "long.csv");
  CHECK(names == std::vector<std::string>{"hr", "temp"});
  DatasetSchema schema;
  schema.channel_names = names;
  schema.channel_count = 2;
  const auto ds = load_dataset(dir / "long.csv", schema);
  CHECK(ds.samples[0].observation_count() == 2);
  CHECK(ds.samples[0].value(1, 1) == 37.5);
}

TEST_CASE("synthetic generation is deterministic") {
  SyntheticConfig sc;
  sc.channels = 3;
  sc.missing_ratio = 0.75;
  sc.samples = 20;
  const auto a = generate_synthetic(sc, 7);
  const auto b = generate_synthetic(sc, 7);
  REQUIRE(a.dataset.size() == b.dataset.size());
  for (std::size_t i = 0; i < a.dataset.size(); ++i) {
    const auto& x = a.dataset.samples[i];
    const auto& y = b.dataset.samples[i];
    CHECK(x.timestamps() == y.timestamps());
    CHECK(x.mask() == y.mask());
    CHECK(x.queries() == y.queries());
    for (int n = 0; n < 3; ++n) CHECK(x.channel_series(n) == y.channel_series(n));
  }
  CHECK(a.oracle.mixing() == b.oracle.mixing());
  const auto c = generate_synthetic(sc, 8);
  CHECK(c.dataset.samples[0].timestamps() != a.dataset.samples[0].timestamps());
}

TEST_CASE("single-channel noiseless oracle is the latent sinusoid") {
  SyntheticConfig sc;
  sc.channels = 1;
  sc.latents = 1;
  sc.noise = 0.0;
  sc.samples = 3;
  sc.missing_ratio = 0.0;
  const auto d = generate_synthetic(sc, 5);
  const double f = d.oracle.frequencies()[0];
  const double m = d.oracle.mixing()[0];
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& lat = d.oracle.latents(i);
    for (double t : {0.0, 0.13, 0.5, 0.999}) {
      const double expected = m * lat.amplitude[0] * std::sin(2.0 * std::numbers::pi * f * t + lat.phase[0]);
      CHECK(d.oracle.value(i, 0, t) == doctest::Approx(expected).epsilon(1e-12));
    }
    // Noiseless observations equal the oracle.
    for (const auto& o : d.dataset.samples[i].channel_series(0)) CHECK(o.value == doctest::Approx(d.oracle.value(i, 0, o.time)));
  }
}

TEST_CASE("achieved missing ratio is within two points of the target") {
  SyntheticConfig sc;
  sc.channels = 3;
  sc.missing_ratio = 0.7;
  sc.samples = 200;
  const auto d = generate_synthetic(sc, 11);
  std::size_t cells = 0, kept = 0;
  for (std::size_t i = 0; i < d.dataset.size(); ++i) {
    cells += d.oracle.grid_instants(i) * 3;
    const auto& s = d.dataset.samples[i];
    for (auto bit : s.mask()) kept += bit;
    for (const auto& q : s.queries()) kept += q.size();
  }
  const double ratio = 1.0 - static_cast<double>(kept) / static_cast<double>(cells);
  CHECK(ratio >= 0.68);
  CHECK(ratio <= 0.72);
  CHECK(d.grid_missing_ratio() == doctest::Approx(ratio).epsilon(1e-12));
  check_mask_consistency(d.dataset);
  // Query targets are the noise-free oracle values.
  for (std::size_t i = 0; i < 10; ++i)
    for (int n = 0; n < 3; ++n)
      for (const auto& q : d.dataset.samples[i].queries()[static_cast<std::size_t>(n)])
        CHECK(q.value == doctest::Approx(d.oracle.value(i, n, q.time)).epsilon(1e-12));
}

TEST_CASE("extreme missingness exhausts the retry cap") {
  SyntheticConfig sc;
  sc.channels = 1;
  sc.missing_ratio = 0.999;
  sc.rate = 2.0;
  sc.samples = 5;
  sc.max_retries = 2;
  CHECK_THROWS(generate_synthetic(sc, 1));
}

TEST_CASE("split sizes, determinism and partition") {
  SyntheticConfig sc;
  sc.samples = 10;
  const auto ds = generate_synthetic(sc, 1).dataset;
  const auto s = split_dataset(ds, {0.6, 0.2, 0.2}, 3);
  CHECK(s.train.size() == 6);
  CHECK(s.val.size() == 2);
  CHECK(s.test.size() == 2);
  const auto again = split_dataset(ds, {0.6, 0.2, 0.2}, 3);
  CHECK(again.train_indices == s.train_indices);
  CHECK(again.test_indices == s.test_indices);
  const auto all_train = split_dataset(ds, {1.0, 0.0, 0.0}, 3);
  CHECK(all_train.train.size() == 10);
  CHECK(all_train.test.empty());

  SyntheticConfig tiny;
  tiny.samples = 2;
  CHECK_THROWS(split_dataset(generate_synthetic(tiny, 1).dataset, {0.6, 0.2, 0.2}, 0));
  CHECK_THROWS(split_dataset(ds, {0.5, 0.2, 0.2}, 0));
}

TEST_CASE("splits are disjoint and exhaustive for random ratios and seeds") {
  SyntheticConfig sc;
  sc.samples = 37;
  const auto ds = generate_synthetic(sc, 2).dataset;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    double a = u(rng), b = u(rng) * (1.0 - a);
    const auto s = split_dataset(ds, {a, b, 1.0 - a - b}, rng());
    std::multiset<std::size_t> all;
    all.insert(s.train_indices.begin(), s.train_indices.end());
    all.insert(s.val_indices.begin(), s.val_indices.end());
    all.insert(s.test_indices.begin(), s.test_indices.end());
    CHECK(all.size() == ds.size());
    CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == ds.size());
    check_mask_consistency(s.train);
  }
}

TEST_CASE("few-shot subsets") {
  SyntheticConfig sc;
  sc.samples = 100;
  const auto ds = generate_synthetic(sc, 9).dataset;
  CHECK(few_shot_subset(ds, 0.2, 1).size() == 20);
  CHECK(few_shot_subset(ds, 0.15, 1).size() == 15);
  CHECK(few_shot_subset(ds, 0.123, 1).size() == 13);
  const auto full = few_shot_subset(ds, 1.0, 1);
  REQUIRE(full.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(full.samples[i].id() == ds.samples[i].id());
  std::vector<std::size_t> a, b;
  few_shot_subset(ds, 0.1, 5, &a);
  few_shot_subset(ds, 0.1, 5, &b);
  CHECK(a == b);
  CHECK_THROWS_AS(few_shot_subset(ds, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(few_shot_subset(ds, 0.001, 1), ConfigError);
}

TEST_CASE("min-max normalization") {
  ImtsDataset ds;
  ds.channel_count = 2;
  ds.channel_names = default_channel_names(2);
  ds.samples.push_back(ImtsSample::from_records("a", 2, {{0, 0.1, 2.0}, {0, 0.2, 4.0}, {1, 0.1, 5.0}, {1, 0.3, 5.0}}));
  testing::WarningCapture warnings;
  const auto stats = fit_normalizer(ds);
  CHECK(warnings.messages.size() == 1);
  const auto n = apply_normalizer(ds, stats);
  CHECK(n.samples[0].channel_series(0) == std::vector<Observation>{{0.1, 0.0}, {0.2, 1.0}});
  for (const auto& o : n.samples[0].channel_series(1)) CHECK(o.value == 0.5);
  CHECK(n.samples[0].mask() == ds.samples[0].mask());
}

TEST_CASE("normalization round-trips random data") {
  SyntheticConfig sc;
  sc.samples = 30;
  const auto ds = generate_synthetic(sc, 21).dataset;
  const auto stats = fit_normalizer(ds);
  const auto back = invert_normalizer(apply_normalizer(ds, stats), stats);
  double worst = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (int c = 0; c < ds.channel_count; ++c) {
      const auto x = ds.samples[i].channel_series(c);
      const auto y = back.samples[i].channel_series(c);
      REQUIRE(x.size() == y.size());
      for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, std::abs(x[k].value - y[k].value) / std::max(1.0, std::abs(x[k].value)));
    }
  }
  CHECK(worst < 1e-9);
  check_mask_consistency(back);
}

TEST_CASE("metric examples and errors") {
  const std::vector<double> p{1, 3}, t{2, 5};
  CHECK(mae(p, t) == 1.5);
  CHECK(mse(p, t) == 2.5);
  const std::vector<double> z{0}, o{1};
  CHECK(mse(z, o) == 1.0);
  CHECK(mae(z, o) == 1.0);
  CHECK(mse(t, t) == 0.0);
  CHECK(mae(t, t) == 0.0);
  CHECK_THROWS(mse(std::vector<double>{}, std::vector<double>{}));
  CHECK_THROWS(mae(p, z));
}

TEST_CASE("metric axioms on random vectors") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(1 + trial % 17), b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = g(rng);
      b[i] = g(rng);
    }
    CHECK(mse(a, b) >= 0.0);
    CHECK(mae(a, b) >= 0.0);
    CHECK(mse(a, b) == mse(b, a));
    CHECK(mae(a, b) == mae(b, a));
    std::vector<double> ca(a), cb(b);
    for (auto& v : ca) v *= 3.0;
    for (auto& v : cb) v *= 3.0;
    CHECK(mse(ca, cb) == doctest::Approx(9.0 * mse(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("forecast tasks never leak and drop empty histories") {
  SyntheticConfig sc;
  sc.samples = 50;
  const auto ds = generate_synthetic(sc, 13).dataset;
  const auto tasks = build_forecast_tasks(ds);
  CHECK(tasks.size() == ds.size());
  for (const auto& t : tasks) {
    double max_hist = -1.0, min_query = 2.0;
    for (const auto& h : t.history)
      for (const auto& o : h) max_hist = std::max(max_hist, o.time);
    for (const auto& q : t.queries)
      for (const auto& o : q) min_query = std::min(min_query, o.time);
    CHECK(max_hist < 0.75);
    CHECK(min_query >= 0.75);
    CHECK(max_hist < min_query);
  }

  ImtsDataset late;
  late.channel_count = 1;
  late.channel_names = default_channel_names(1);
  late.samples.push_back(ImtsSample::from_records("only_future", 1, {{0, 0.9, 1.0}}));
  late.samples.push_back(ImtsSample::from_records("ok", 1, {{0, 0.1, 1.0}, {0, 0.75, 2.0}}));
  testing::WarningCapture warnings;
  const auto kept = build_forecast_tasks(late, 0.75, 0.25);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].sample_id == "ok");
  // The boundary observation belongs to the horizon.
  CHECK(kept[0].queries[0].size() == 1);
  CHECK(warnings.messages.size() == 1);
}
