#include "vimts/harness/report.hpp"

#include "vimts/fileio.hpp"
#include "vimts/harness/experiment.hpp"
#include "vimts/harness/plot.hpp"
#include "vimts/log.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace vimts::harness {
namespace fs = std::filesystem;
using nlohmann::json;

std::vector<RunRecord> collect_runs(const fs::path& root) {
  std::vector<RunRecord> out;
  const fs::path runs = root / "runs";
  if (!fs::is_directory(runs)) return out;
  for (const auto& entry : fs::recursive_directory_iterator(runs)) {
    if (!entry.is_regular_file() || entry.path().filename() != "metrics.json") continue;
    json j;
    try {
      j = json::parse(io::read_file(entry.path()));
    } catch (const std::exception& e) {
      log::warn("skipping unreadable " + entry.path().string() + ": " + e.what());
      continue;
    }
    RunRecord r;
    r.dir = entry.path().parent_path();
    r.name = j.value("name", "");
    r.variant = j.value("variant", "");
    r.ratio = j.value("ratio", 1.0);
    r.seed = j.value("seed", std::uint64_t{0});
    r.manifest_hash = j.value("manifest_hash", "");
    r.ok = j.value("status", "") == "ok";
    r.error = j.value("error", "");
    r.hparams = j.value("hparams", json::object());
    if (r.ok) {
      r.mse = j.at("test").at("mse").get<double>();
      r.mae = j.at("test").at("mae").get<double>();
      r.locf_mse = j.at("baselines").at("locf").at("mse").get<double>();
      r.mean_mse = j.at("baselines").at("channel_mean").at("mse").get<double>();
    }
    const fs::path timing = r.dir / "timing.json";
    if (fs::exists(timing)) {
      try {
        r.seconds = json::parse(io::read_file(timing)).value("total_seconds", 0.0);
      } catch (const std::exception&) {
        r.seconds = 0.0;
      }
    }
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.name, a.variant, a.ratio, a.seed) < std::tie(b.name, b.variant, b.ratio, b.seed);
  });
  return out;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& runs) {
  std::map<std::tuple<std::string, std::string, double>, std::vector<const RunRecord*>> groups;
  for (const auto& r : runs) groups[{r.name, r.variant, r.ratio}].push_back(&r);
  std::vector<SummaryRow> out;
  for (const auto& [key, members] : groups) {
    SummaryRow row;
    std::tie(row.name, row.variant, row.ratio) = key;
    std::vector<double> mse, mae, locf, mean;
    double seconds = 0.0;
    for (const auto* r : members) {
      if (!r->ok) {
        ++row.failed;
        continue;
      }
      row.seeds.push_back(r->seed);
      mse.push_back(r->mse);
      mae.push_back(r->mae);
      locf.push_back(r->locf_mse);
      mean.push_back(r->mean_mse);
      seconds += r->seconds;
    }
    row.mse = mean_std(mse);
    row.mae = mean_std(mae);
    row.locf_mse = mean_std(locf);
    row.mean_mse = mean_std(mean);
    row.seconds = mse.empty() ? 0.0 : seconds / static_cast<double>(mse.size());
    out.push_back(std::move(row));
  }
  // "complete" leads each (name, ratio) block.
  std::stable_sort(out.begin(), out.end(), [](const SummaryRow& a, const SummaryRow& b) {
    return std::make_tuple(a.name, a.ratio, a.variant != "complete", a.variant) <
           std::make_tuple(b.name, b.ratio, b.variant != "complete", b.variant);
  });
  return out;
}

std::string format_mean_std(const MeanStd& v) {
  if (v.n == 0) return "failed";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4e ± %.1e", v.mean, v.std);
  return buf;
}

std::string ablation_table(const std::vector<SummaryRow>& rows, const std::string& name, double ratio) {
  const SummaryRow* base = nullptr;
  for (const auto& r : rows) {
    if (r.name == name && r.ratio == ratio && r.variant == "complete") base = &r;
  }
  std::ostringstream os;
  os << "| Variant | Seeds | MSE | MAE | ΔMSE vs complete |\n|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    if (r.name != name || r.ratio != ratio) continue;
    std::string delta = "n/a";
    if (base != nullptr && base->mse.n > 0 && r.mse.n > 0 && base->mse.mean > 0.0) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%+.1f%%", 100.0 * (r.mse.mean / base->mse.mean - 1.0));
      delta = buf;
    }
    os << "| " << r.variant << " | " << r.mse.n << (r.failed ? " (+" + std::to_string(r.failed) + " failed)" : "")
       << " | " << format_mean_std(r.mse) << " | " << format_mean_std(r.mae) << " | " << delta << " |\n";
  }
  return os.str();
}

std::string few_shot_table(const std::vector<SummaryRow>& rows, const std::string& name) {
  std::set<double> ratios;
  std::set<std::string> variants;
  std::map<std::pair<std::string, double>, const SummaryRow*> at;
  for (const auto& r : rows) {
    if (r.name != name) continue;
    ratios.insert(r.ratio);
    variants.insert(r.variant);
    at[{r.variant, r.ratio}] = &r;
  }
  std::ostringstream os;
  os << "| Variant |";
  for (double q : ratios) os << " " << ratio_label(q * 100.0) << "% |";
  os << "\n|---|";
  for (std::size_t i = 0; i < ratios.size(); ++i) os << "---|";
  os << "\n";
  for (const auto& v : variants) {
    os << "| " << v << " |";
    for (double q : ratios) {
      const auto it = at.find({v, q});
      os << " " << (it == at.end() ? "" : format_mean_std(it->second->mse)) << " |";
    }
    os << "\n";
  }
  return os.str();
}

fs::path write_report(const fs::path& root) {
  const auto runs = collect_runs(root);
  if (runs.empty()) throw NoRunsError("no runs found under " + (root / "runs").string());
  const auto rows = summarize(runs);

  std::set<std::string> names;
  for (const auto& r : rows) names.insert(r.name);

  std::ostringstream md;
  md << "# Experiment report\n\n";
  md << runs.size() << " runs under `runs/`. Metrics are pooled test-set values on the normalized scale, "
     << "mean ± sample standard deviation over seeds.\n";
  for (const auto& name : names) {
    md << "\n## " << name << "\n\n";
    md << "| Variant | Ratio | Seeds | MSE | MAE | LOCF MSE | Channel-mean MSE | Mean run time (s) |\n";
    md << "|---|---|---|---|---|---|---|---|\n";
    std::set<double> ratios;
    std::map<double, int> variants_at;
    for (const auto& r : rows) {
      if (r.name != name) continue;
      ratios.insert(r.ratio);
      ++variants_at[r.ratio];
      char secs[32];
      std::snprintf(secs, sizeof secs, "%.1f", r.seconds);
      md << "| " << r.variant << " | " << ratio_label(r.ratio) << " | " << r.mse.n << " | " << format_mean_std(r.mse)
         << " | " << format_mean_std(r.mae) << " | " << format_mean_std(r.locf_mse) << " | "
         << format_mean_std(r.mean_mse) << " | " << secs << " |\n";
    }
    for (double q : ratios) {
      if (variants_at[q] < 2) continue;
      md << "\n### Ablation at ratio " << ratio_label(q) << "\n\n" << ablation_table(rows, name, q);
    }
    if (ratios.size() > 1) md << "\n### Few-shot test MSE\n\n" << few_shot_table(rows, name);
  }

  std::vector<const RunRecord*> failed;
  for (const auto& r : runs) {
    if (!r.ok) failed.push_back(&r);
  }
  if (!failed.empty()) {
    md << "\n## Failed runs\n\n";
    for (const auto* r : failed) {
      md << "- " << r->name << " / " << r->variant << " / ratio " << ratio_label(r->ratio) << " / seed " << r->seed
         << ": " << r->error << "\n";
    }
  }

  const auto plots = emit_plots(root);
  if (!plots.empty()) {
    md << "\n## Plots\n\n";
    for (const auto& p : plots) md << "- `" << fs::relative(p, root).generic_string() << "`\n";
  }

  json summary = json::array();
  for (const auto& r : rows) {
    summary.push_back(json{{"name", r.name},
                           {"variant", r.variant},
                           {"ratio", r.ratio},
                           {"seeds", r.seeds},
                           {"failed", r.failed},
                           {"mse_mean", r.mse.mean},
                           {"mse_std", r.mse.std},
                           {"mae_mean", r.mae.mean},
                           {"mae_std", r.mae.std},
                           {"locf_mse", r.locf_mse.mean},
                           {"channel_mean_mse", r.mean_mse.mean}});
  }
  io::write_atomic(root / "summary.json", summary.dump(2) + "\n");
  const fs::path out = root / "report.md";
  io::write_atomic(out, md.str());
  return out;
}

}  // namespace vimts::harness
