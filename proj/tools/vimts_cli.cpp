#include "vimts/core/dataset_io.hpp"
#include "vimts/core/synthetic.hpp"
#include "vimts/errors.hpp"
#include "vimts/fileio.hpp"
#include "vimts/harness/experiment.hpp"
#include "vimts/harness/manifest.hpp"
#include "vimts/harness/plot.hpp"
#include "vimts/harness/report.hpp"
#include "vimts/log.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace vimts;
using namespace vimts::harness;
using nlohmann::json;

namespace {

constexpr int kUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::string device = "cpu";
  int threads = 0;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config) {
  auto* opt = cmd->add_option("-c,--config", c.config, "Experiment manifest (JSON)");
  if (needs_config) opt->required();
  cmd->add_option("-o,--out", c.out, "Output root (default: manifest output_dir, then $VIMTS_OUTPUT_DIR)");
  cmd->add_option("--set", c.overrides, "Override a manifest field, e.g. finetune.lr=0.001")->take_all();
  cmd->add_option("--seed", c.seed, "Run a single seed");
  cmd->add_option("--seeds", c.seeds, "Comma-separated seed list")->delimiter(',');
  cmd->add_option("--device", c.device, "Compute device (cpu)");
  cmd->add_option("--threads", c.threads, "OpenMP threads (0: runtime default)");
  cmd->add_flag("-v,--verbose", c.verbose, "Progress messages on stderr");
}

ExperimentManifest manifest_from(const Common& c) {
  json doc = json::object();
  if (!c.config.empty()) {
    if (!fs::exists(c.config)) throw UsageError("manifest not found: " + c.config);
    try {
      doc = json::parse(io::read_file(c.config));
    } catch (const json::parse_error& e) {
      throw UsageError(c.config + ": " + e.what());
    }
  }
  for (const auto& o : c.overrides) apply_override(doc, o);
  auto m = ExperimentManifest::from_json(doc);
  if (c.seed) m.seeds = {*c.seed};
  if (!c.seeds.empty()) m.seeds = c.seeds;
  return m;
}

fs::path output_root(const Common& c, const std::string& manifest_dir) {
  if (!c.out.empty()) return c.out;
  if (!manifest_dir.empty()) return manifest_dir;
  if (const char* env = std::getenv("VIMTS_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return "vimts_out";
}

void setup(const Common& c) {
  if (c.device != "cpu") throw UsageError("unsupported device '" + c.device + "' (only cpu)");
  if (c.threads < 0) throw UsageError("--threads must be >= 0");
  if (c.threads > 0) omp_set_num_threads(c.threads);
  log::set_verbose(c.verbose);
}

int report_outcomes(const std::vector<RunOutcome>& runs) {
  std::size_t failed = 0;
  for (const auto& r : runs) {
    if (r.ok) {
      std::cout << r.variant << " ratio " << ratio_label(r.ratio) << " seed " << r.seed << ": mse " << r.test.mse
                << " mae " << r.test.mae << " (" << r.dir.string() << ")\n";
    } else {
      ++failed;
      std::cout << r.variant << " ratio " << ratio_label(r.ratio) << " seed " << r.seed << ": FAILED " << r.error
                << "\n";
    }
  }
  if (failed > 0) {
    std::cerr << "error: " << failed << " of " << runs.size() << " runs failed\n";
    return 1;
  }
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Irregular multivariate time series forecasting experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common gen_c, conv_c, ssl_c, ft_c, eval_c, abl_c, fs_c, rep_c;

  auto* gen = app.add_subcommand("generate", "Write the manifest's synthetic dataset as canonical CSV");
  add_common(gen, gen_c, true);
  std::string gen_csv;
  gen->add_option("--csv", gen_csv, "Output CSV (default <out>/data/<name>.csv)");

  auto* conv = app.add_subcommand("convert", "Convert a wide CSV into the canonical long format");
  add_common(conv, conv_c, false);
  std::string conv_in, conv_outfile;
  conv->add_option("--input", conv_in, "Wide CSV: sample_id,timestamp,<channels...>")->required();
  conv->add_option("--output", conv_outfile, "Canonical CSV to write")->required();

  auto* ssl = app.add_subcommand("ssl", "Run the self-supervised stage and save its checkpoint");
  add_common(ssl, ssl_c, true);
  std::string ssl_variant = "";

  auto* ft = app.add_subcommand("finetune", "Train (SSL unless disabled, then finetune) and evaluate");
  add_common(ft, ft_c, true);
  std::string ft_variant, ft_init;
  double ft_ratio = 0.0;
  ft->add_option("--variant", ft_variant, "Variant name, e.g. no_gcn or no_ssl+no_gcn");
  ft->add_option("--init", ft_init, "Start from a saved parameter checkpoint (skips SSL)");
  ft->add_option("--ratio", ft_ratio, "Training-data ratio in (0, 1]");
  ssl->add_option("--variant", ssl_variant, "Variant name");

  auto* ev = app.add_subcommand("eval", "Evaluate saved models on the test split");
  add_common(ev, eval_c, true);
  std::string ev_variant, ev_ckpt;
  double ev_ratio = 0.0;
  ev->add_option("--variant", ev_variant, "Variant whose runs to evaluate");
  ev->add_option("--ratio", ev_ratio, "Training-data ratio of the runs");
  ev->add_option("--checkpoint", ev_ckpt, "Explicit checkpoint (default: each seed's model.safetensors)");

  auto* abl = app.add_subcommand("ablate", "Run complete plus ablation variants over all seeds");
  add_common(abl, abl_c, true);
  std::string abl_variants;
  abl->add_option("--variants", abl_variants, "Comma-separated variants (no_gcn,no_ssl,no_pretrained,rp_transformer,direct_head)");

  auto* few = app.add_subcommand("fewshot", "Sweep training-data ratios");
  add_common(few, fs_c, true);
  std::vector<double> fs_ratios{0.1, 0.2, 0.5, 1.0};
  std::string fs_variants;
  few->add_option("--ratios", fs_ratios, "Comma-separated ratios")->delimiter(',');
  few->add_option("--variants", fs_variants, "Extra variants besides complete");

  auto* rep = app.add_subcommand("report", "Rebuild report.md, summary.json and plots from run artifacts");
  add_common(rep, rep_c, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << " (see --help)\n";
    return kUsage;
  }

  try {
    if (gen->parsed()) {
      setup(gen_c);
      const auto m = manifest_from(gen_c);
      if (m.dataset.source != "synthetic") throw UsageError("generate needs dataset.source = synthetic");
      const fs::path out = gen_csv.empty() ? output_root(gen_c, m.output_dir) / "data" / (m.name + ".csv") : fs::path(gen_csv);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      const auto data = core::generate_synthetic(m.dataset.synthetic, m.dataset.seed);
      core::write_dataset(data.dataset, out);
      std::cout << "wrote " << data.dataset.size() << " samples to " << out.string() << " and "
                << core::queries_path_for(out).string() << "\n";
      return 0;
    }
    if (conv->parsed()) {
      setup(conv_c);
      const auto names = core::convert_wide_csv(conv_in, conv_outfile);
      std::cout << "converted " << names.size() << " channels into " << conv_outfile << "\n";
      return 0;
    }
    if (ssl->parsed() || ft->parsed()) {
      const Common& c = ssl->parsed() ? ssl_c : ft_c;
      setup(c);
      const auto m = manifest_from(c);
      const fs::path root = output_root(c, m.output_dir);
      const std::string variant = ssl->parsed() ? ssl_variant : ft_variant;
      const AblationFlags flags = variant.empty() ? m.ablation : parse_variant(variant, m.ablation);
      const double ratio = ft_ratio > 0.0 ? ft_ratio : m.few_shot_ratio;
      if (!(ratio > 0.0 && ratio <= 1.0)) throw UsageError("--ratio must lie in (0, 1]");
      RunOptions opts;
      opts.ssl_only = ssl->parsed();
      if (!ft_init.empty()) {
        if (!fs::exists(ft_init)) throw UsageError("checkpoint not found: " + ft_init);
        opts.init_checkpoint = ft_init;
      }
      const auto data = prepare_data(m.dataset);
      std::vector<RunOutcome> runs;
      for (auto seed : m.seeds) runs.push_back(run_experiment(m, {flags, seed, ratio}, data, root, opts, true));
      if (opts.ssl_only) {
        for (const auto& r : runs) {
          std::cout << r.variant << " seed " << r.seed << ": " << (r.ok ? "ssl checkpoint in " + r.dir.string() : "FAILED " + r.error)
                    << "\n";
        }
        for (const auto& r : runs) {
          if (!r.ok) return 1;
        }
        return 0;
      }
      return report_outcomes(runs);
    }
    if (ev->parsed()) {
      setup(eval_c);
      const auto m = manifest_from(eval_c);
      const fs::path root = output_root(eval_c, m.output_dir);
      const AblationFlags flags = ev_variant.empty() ? m.ablation : parse_variant(ev_variant, m.ablation);
      const double ratio = ev_ratio > 0.0 ? ev_ratio : m.few_shot_ratio;
      const auto data = prepare_data(m.dataset);
      for (auto seed : m.seeds) {
        const fs::path dir = run_directory(root, m.name, flags.label(), ratio, seed);
        const fs::path ckpt = ev_ckpt.empty() ? dir / "model.safetensors" : fs::path(ev_ckpt);
        if (!fs::exists(ckpt)) throw UsageError("checkpoint not found: " + ckpt.string());
        fs::create_directories(dir);
        const auto r = evaluate_checkpoint(m, {flags, seed, ratio}, data, ckpt, dir / "eval.json");
        std::cout << flags.label() << " seed " << seed << ": mse " << r.mse << " mae " << r.mae << "\n";
      }
      return 0;
    }
    if (abl->parsed()) {
      setup(abl_c);
      const auto m = manifest_from(abl_c);
      const fs::path root = output_root(abl_c, m.output_dir);
      const auto runs = run_ablation_matrix(m, split_list(abl_variants), root);
      const std::string table = ablation_table(summarize(collect_runs(root)), m.name, m.few_shot_ratio);
      io::write_atomic(root / ("ablation_" + m.name + ".md"), table);
      const int rc = report_outcomes(runs);
      std::cout << "\n" << table;
      return rc;
    }
    if (few->parsed()) {
      setup(fs_c);
      const auto m = manifest_from(fs_c);
      const fs::path root = output_root(fs_c, m.output_dir);
      const auto runs = run_few_shot(m, split_list(fs_variants), fs_ratios, root);
      const std::string table = few_shot_table(summarize(collect_runs(root)), m.name);
      io::write_atomic(root / ("fewshot_" + m.name + ".md"), table);
      const int rc = report_outcomes(runs);
      std::cout << "\n" << table;
      return rc;
    }
    if (rep->parsed()) {
      setup(rep_c);
      std::string manifest_dir;
      if (!rep_c.config.empty()) manifest_dir = manifest_from(rep_c).output_dir;
      const fs::path root = output_root(rep_c, manifest_dir);
      const auto path = write_report(root);
      std::cout << "wrote " << path.string() << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NoRunsError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
