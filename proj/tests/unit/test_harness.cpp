#include "support/capture.hpp"
#include "vimts/errors.hpp"
#include "vimts/harness/experiment.hpp"
#include "vimts/harness/manifest.hpp"
#include "vimts/harness/plot.hpp"
#include "vimts/harness/report.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace vimts;
using namespace vimts::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vimts_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

ExperimentManifest tiny_manifest() {
  return ExperimentManifest::from_json(json::parse(R"({
    "name": "tiny",
    "dataset": {"synthetic": {"samples": 30}, "seed": 3, "split_seed": 1},
    "model": {"enc_dim": 16, "dec_dim": 16},
    "ssl": {"max_epochs": 2, "lr": 0.001},
    "finetune": {"max_epochs": 2, "lr": 0.001},
    "seeds": [0, 1]
  })"));
}

}  // namespace

TEST_CASE("manifest round-trips through JSON") {
  const auto m = tiny_manifest();
  const auto back = ExperimentManifest::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  CHECK(back.hash() == m.hash());
  CHECK(m.hash().size() == 16);
}

TEST_CASE("manifest rejects unknown keys and bad values") {
  CHECK_THROWS_AS(ExperimentManifest::from_json(json{{"nmae", "x"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentManifest::from_json(json{{"model", {{"enc_dimm", 8}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentManifest::from_json(json{{"seeds", json::array()}}), ConfigError);
  CHECK_THROWS_AS(ExperimentManifest::from_json(json{{"few_shot_ratio", 0.0}}), ConfigError);
  CHECK_THROWS_AS(ExperimentManifest::from_json(json{{"finetune", {{"lr", "fast"}}}}), ConfigError);
}

TEST_CASE("manifest hash ignores seeds and output location only") {
  const auto m = tiny_manifest();
  auto other = m;
  other.seeds = {7};
  other.output_dir = "/elsewhere";
  CHECK(other.hash() == m.hash());
  auto changed = m;
  changed.finetune.lr = 2e-3;
  CHECK(changed.hash() != m.hash());
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("dotted overrides") {
  json doc = tiny_manifest().to_json();
  apply_override(doc, "finetune.lr=0.01");
  apply_override(doc, "name=override");
  apply_override(doc, "ablation.no_gcn=true");
  const auto m = ExperimentManifest::from_json(doc);
  CHECK(m.finetune.lr == 0.01);
  CHECK(m.name == "override");
  CHECK(m.ablation.no_gcn);
  CHECK_THROWS_AS(apply_override(doc, "finetune.lr"), ConfigError);
}

TEST_CASE("variant names") {
  CHECK(parse_variant("complete").label() == "complete");
  CHECK(parse_variant("no_gcn").no_gcn);
  const auto both = parse_variant("no_gcn+no_ssl");
  CHECK(both.no_gcn);
  CHECK(both.no_ssl);
  CHECK(both.label() == "no_gcn+no_ssl");
  CHECK(parse_variant("direct_head").finetune_head == p2p::HeadMode::DirectProjection);
  CHECK_THROWS_AS(parse_variant("no_everything"), ConfigError);
  const auto m = tiny_manifest();
  CHECK_FALSE(effective_model_config(m, {parse_variant("no_gcn"), 0, 1.0}).use_graph);
  CHECK(effective_model_config(m, {parse_variant("rp_transformer"), 0, 1.0}).backbone_kind == backbone::BackboneKind::Plain);
}

TEST_CASE("a run writes hashed artifacts and reruns byte-identically") {
  const auto m = tiny_manifest();
  const auto data = prepare_data(m.dataset);
  const auto root_a = temp_dir("run_a");
  const auto root_b = temp_dir("run_b");
  const auto a = run_experiment(m, {{}, 0, 1.0}, data, root_a);
  const auto b = run_experiment(m, {{}, 0, 1.0}, data, root_b);
  REQUIRE(a.ok);
  CHECK(a.dir == run_directory(root_a, "tiny", "complete", 1.0, 0));
  for (const char* f : {"config.json", "splits.json", "history.csv", "metrics.json", "predictions.csv",
                        "model.safetensors", "timing.json"})
    CHECK(fs::exists(a.dir / f));
  const auto metrics = read_json(a.dir / "metrics.json");
  CHECK(metrics["manifest_hash"] == m.hash());
  CHECK(metrics["test"]["seed"] == 0);
  CHECK(metrics["test"]["mse"].get<double>() == a.test.mse);
  CHECK(metrics["test"]["n_queries"].get<std::size_t>() == a.test.n_queries);
  CHECK(read_json(a.dir / "splits.json")["manifest_hash"] == m.hash());
  CHECK(slurp(a.dir / "history.csv").rfind("# manifest_hash=" + m.hash(), 0) == 0);
  for (const char* f : {"metrics.json", "history.csv", "predictions.csv", "splits.json", "model.safetensors"})
    CHECK_MESSAGE(slurp(a.dir / f) == slurp(b.dir / f), f);
}

TEST_CASE("variants share splits and a failing variant is recorded") {
  auto m = tiny_manifest();
  m.seeds = {0};
  const auto root = temp_dir("matrix");
  const auto data = prepare_data(m.dataset);
  const auto complete = run_experiment(m, {{}, 0, 1.0}, data, root);
  const auto no_gcn = run_experiment(m, {parse_variant("no_gcn"), 0, 1.0}, data, root);
  REQUIRE(complete.ok);
  REQUIRE(no_gcn.ok);
  const auto sa = read_json(complete.dir / "splits.json");
  const auto sb = read_json(no_gcn.dir / "splits.json");
  CHECK(sa["train"] == sb["train"]);
  CHECK(sa["test"] == sb["test"]);

  auto broken = m;
  broken.pretrained = (root / "missing.safetensors").string();
  const auto failed = run_experiment(broken, {{}, 0, 1.0}, data, root / "broken", {}, true);
  CHECK_FALSE(failed.ok);
  CHECK_FALSE(failed.error.empty());
  CHECK(read_json(failed.dir / "metrics.json")["status"] == "failed");
  CHECK_THROWS(run_experiment(broken, {{}, 0, 1.0}, data, root / "broken2"));
}

TEST_CASE("an empty variant list runs only the complete model") {
  auto m = tiny_manifest();
  m.seeds = {0};
  m.ssl.max_epochs = 1;
  m.finetune.max_epochs = 1;
  const auto root = temp_dir("only_complete");
  const auto outcomes = run_ablation_matrix(m, {}, root);
  REQUIRE(outcomes.size() == 1);
  CHECK(outcomes[0].variant == "complete");
  const auto runs = collect_runs(root);
  REQUIRE(runs.size() == 1);
  CHECK(runs[0].variant == "complete");
}

TEST_CASE("few-shot runs use nested subsets of the shared training split") {
  auto m = tiny_manifest();
  m.seeds = {0};
  m.ssl.max_epochs = 1;
  m.finetune.max_epochs = 1;
  const auto root = temp_dir("fewshot");
  const auto outcomes = run_few_shot(m, {}, {0.5, 1.0}, root);
  REQUIRE(outcomes.size() == 2);
  const auto half = read_json(run_directory(root, "tiny", "complete", 0.5, 0) / "splits.json");
  const auto full = read_json(run_directory(root, "tiny", "complete", 1.0, 0) / "splits.json");
  CHECK(half["train"] == full["train"]);
  CHECK(half["few_shot_train"].size() * 2 == full["train"].size());
  for (const auto& idx : half["few_shot_train"])
    CHECK(std::find(full["train"].begin(), full["train"].end(), idx) != full["train"].end());
}

TEST_CASE("reports come from disk alone") {
  CHECK_THROWS_AS(write_report(temp_dir("nothing")), NoRunsError);

  auto m = tiny_manifest();
  m.ssl.max_epochs = 1;
  m.finetune.max_epochs = 1;
  const auto root = temp_dir("report");
  run_ablation_matrix(m, {"no_gcn"}, root);
  const auto report = write_report(root);
  const std::string first = slurp(report);
  CHECK(first.find("no_gcn") != std::string::npos);
  CHECK(first.find("complete") != std::string::npos);
  const auto summary = read_json(root / "summary.json");
  // Regenerating from the same artifacts reproduces the report.
  fs::remove(report);
  write_report(root);
  CHECK(slurp(report) == first);
  CHECK(read_json(root / "summary.json") == summary);

  const auto rows = summarize(collect_runs(root));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].variant == "complete");
  CHECK(rows[0].mse.n == 2);
}

TEST_CASE("mean and sample standard deviation") {
  const auto a = mean_std({1.0, 2.0, 3.0});
  CHECK(a.mean == 2.0);
  CHECK(a.std == doctest::Approx(1.0));
  CHECK(mean_std({4.0}).std == 0.0);
  CHECK(format_mean_std({0.0123, 0.00045, 3}) == "1.2300e-02 ± 4.5e-04");
}

TEST_CASE("loss plots carry the history values") {
  auto m = tiny_manifest();
  m.seeds = {0};
  m.ssl.max_epochs = 2;
  m.finetune.max_epochs = 3;
  const auto root = temp_dir("plots");
  const auto data = prepare_data(m.dataset);
  const auto run = run_experiment(m, {{}, 0, 1.0}, data, root);
  const auto history = read_history_csv(run.dir / "history.csv");
  const auto plans = plan_plots(root);
  const PlotPlan* loss = nullptr;
  for (const auto& p : plans)
    if (p.filename.rfind("loss_", 0) == 0) loss = &p;
  REQUIRE(loss != nullptr);
  std::size_t matched = 0;
  for (const auto& s : loss->series) {
    const bool train = s.label.find("train") != std::string::npos;
    std::size_t k = 0;
    for (const auto& h : history) {
      if (s.label.rfind(h.stage, 0) != 0) continue;
      REQUIRE(k < s.y.size());
      CHECK(s.x[k] == h.epoch);
      CHECK(s.y[k] == (train ? h.train_loss : h.val_loss));
      ++k;
      ++matched;
    }
    CHECK(k == s.y.size());
  }
  CHECK(matched == 2 * history.size());

  const auto images = emit_plots(root);
  CHECK_FALSE(images.empty());
  for (const auto& p : images) {
    const auto img = decode_png(slurp(p));
    CHECK(img.width == 800);
    CHECK(img.height == 500);
  }
}

TEST_CASE("plot edge cases warn") {
  {
    testing::WarningCapture warnings;
    const auto root = temp_dir("plots_empty");
    CHECK(emit_plots(root).empty());
    CHECK(warnings.messages.size() == 1);
  }
  auto m = tiny_manifest();
  m.seeds = {0};
  m.ssl.max_epochs = 1;
  m.finetune.max_epochs = 1;
  const auto root = temp_dir("plots_nohist");
  const auto run = run_experiment(m, {{}, 0, 1.0}, prepare_data(m.dataset), root);
  fs::remove(run.dir / "history.csv");
  testing::WarningCapture warnings;
  emit_plots(root);
  bool skipped = false;
  for (const auto& w : warnings.messages) skipped = skipped || w.find("history.csv") != std::string::npos;
  CHECK(skipped);
}

TEST_CASE("PNG encode and decode round-trip") {
  Image img;
  img.width = 7;
  img.height = 3;
  img.rgb.resize(7 * 3 * 3);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(i * 37);
  const auto back = decode_png(encode_png(img));
  CHECK(back.width == 7);
  CHECK(back.height == 3);
  CHECK(back.rgb == img.rgb);

  PlotPlan desc;
  desc.series.push_back({"s", {0, 1, 2}, {1, 0.1, 0.01}});
  desc.log_y = true;
  const auto rendered = render_plot(desc, 320, 200);
  CHECK(decode_png(encode_png(rendered)).rgb == rendered.rgb);
}
