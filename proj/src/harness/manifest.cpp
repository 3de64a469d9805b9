#include "vimts/harness/manifest.hpp"

#include "vimts/errors.hpp"
#include "vimts/fileio.hpp"

#include <cstdio>
#include <set>
#include <sstream>

namespace vimts::harness {
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::set<std::string> keys_of(const json& j) {
  std::set<std::string> out;
  for (const auto& [key, value] : j.items()) out.insert(key);
  return out;
}

template <typename T>
T parse_section(const json& j, const std::string& where) {
  check_keys(j, keys_of(T{}.to_json()), where);
  try {
    return T::from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

const std::vector<std::string> kFlagNames{"no_gcn", "no_pretrained", "no_ssl", "rp_transformer", "direct_head"};

}  // namespace

std::string AblationFlags::label() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(no_gcn, "no_gcn");
  add(no_pretrained, "no_pretrained");
  add(no_ssl, "no_ssl");
  add(rp_transformer, "rp_transformer");
  add(finetune_head == p2p::HeadMode::DirectProjection, "direct_head");
  return out.empty() ? "complete" : out;
}

AblationFlags parse_variant(const std::string& name, AblationFlags base) {
  if (name.empty()) throw ConfigError("empty variant name");
  std::stringstream ss(name);
  std::string part;
  while (std::getline(ss, part, '+')) {
    if (part == "complete") continue;
    if (part == "no_gcn") {
      base.no_gcn = true;
    } else if (part == "no_pretrained") {
      base.no_pretrained = true;
    } else if (part == "no_ssl") {
      base.no_ssl = true;
    } else if (part == "rp_transformer") {
      base.rp_transformer = true;
    } else if (part == "direct_head") {
      base.ssl_head = p2p::HeadMode::DirectProjection;
      base.finetune_head = p2p::HeadMode::DirectProjection;
    } else {
      std::string known;
      for (const auto& k : kFlagNames) known += " " + k;
      throw ConfigError("unknown variant '" + part + "' (known: complete" + known + ")");
    }
  }
  return base;
}

ExperimentManifest ExperimentManifest::from_json(const json& j) {
  check_keys(j, {"name", "dataset", "model", "ssl", "finetune", "ablation", "pretrained", "keymap", "seeds",
                 "few_shot_ratio", "output_dir"},
             "manifest");
  ExperimentManifest m;
  try {
    m.name = j.value("name", m.name);
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      check_keys(d, {"source", "synthetic", "seed", "path", "schema", "split", "split_seed"}, "dataset");
      m.dataset.source = d.value("source", m.dataset.source);
      if (d.contains("synthetic")) m.dataset.synthetic = parse_section<core::SyntheticConfig>(d.at("synthetic"), "dataset.synthetic");
      m.dataset.seed = d.value("seed", m.dataset.seed);
      m.dataset.path = d.value("path", m.dataset.path);
      if (d.contains("schema")) m.dataset.schema = parse_section<core::DatasetSchema>(d.at("schema"), "dataset.schema");
      if (d.contains("split")) m.dataset.split = d.at("split").get<std::array<double, 3>>();
      m.dataset.split_seed = d.value("split_seed", m.dataset.split_seed);
    }
    if (j.contains("model")) m.model = parse_section<ModelConfig>(j.at("model"), "model");
    m.ssl.stage = train::Stage::Ssl;
    m.ssl.policy = train::FreezePolicy::All;
    if (j.contains("ssl")) {
      json s = j.at("ssl");
      s["stage"] = "ssl";
      m.ssl = parse_section<train::TrainPlan>(s, "ssl");
    }
    if (j.contains("finetune")) {
      json f = j.at("finetune");
      f["stage"] = "finetune";
      if (!f.contains("freeze_policy")) f["freeze_policy"] = train::policy_name(train::FreezePolicy::Norm);
      m.finetune = parse_section<train::TrainPlan>(f, "finetune");
    }
    if (j.contains("ablation")) {
      const json& a = j.at("ablation");
      check_keys(a, {"no_gcn", "no_pretrained", "no_ssl", "rp_transformer", "ssl_head", "finetune_head"}, "ablation");
      m.ablation.no_gcn = a.value("no_gcn", false);
      m.ablation.no_pretrained = a.value("no_pretrained", false);
      m.ablation.no_ssl = a.value("no_ssl", false);
      m.ablation.rp_transformer = a.value("rp_transformer", false);
      m.ablation.ssl_head = p2p::parse_head_mode(a.value("ssl_head", p2p::head_mode_name(m.ablation.ssl_head)));
      m.ablation.finetune_head =
          p2p::parse_head_mode(a.value("finetune_head", p2p::head_mode_name(m.ablation.finetune_head)));
    }
    m.pretrained = j.value("pretrained", m.pretrained);
    m.keymap = j.value("keymap", m.keymap);
    if (j.contains("seeds")) m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.few_shot_ratio = j.value("few_shot_ratio", m.few_shot_ratio);
    m.output_dir = j.value("output_dir", m.output_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

json ExperimentManifest::to_json() const {
  json d{{"source", dataset.source},
         {"seed", dataset.seed},
         {"split", dataset.split},
         {"split_seed", dataset.split_seed}};
  if (dataset.source == "synthetic") {
    d["synthetic"] = dataset.synthetic.to_json();
  } else {
    d["path"] = dataset.path;
    d["schema"] = dataset.schema.to_json();
  }
  return json{{"name", name},
              {"dataset", d},
              {"model", model.to_json()},
              {"ssl", ssl.to_json()},
              {"finetune", finetune.to_json()},
              {"ablation",
               {{"no_gcn", ablation.no_gcn},
                {"no_pretrained", ablation.no_pretrained},
                {"no_ssl", ablation.no_ssl},
                {"rp_transformer", ablation.rp_transformer},
                {"ssl_head", p2p::head_mode_name(ablation.ssl_head)},
                {"finetune_head", p2p::head_mode_name(ablation.finetune_head)}}},
              {"pretrained", pretrained},
              {"keymap", keymap},
              {"seeds", seeds},
              {"few_shot_ratio", few_shot_ratio},
              {"output_dir", output_dir}};
}

void ExperimentManifest::validate() const {
  if (name.empty() || name.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("manifest: name must be non-empty without path separators");
  }
  if (dataset.source != "synthetic" && dataset.source != "csv") {
    throw ConfigError("dataset.source must be synthetic or csv");
  }
  if (dataset.source == "csv" && dataset.path.empty()) throw ConfigError("dataset.path is required for csv data");
  double total = 0.0;
  for (double r : dataset.split) {
    if (r < 0.0) throw ConfigError("dataset.split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("dataset.split must sum to 1");
  if (seeds.empty()) throw ConfigError("manifest: seeds must be non-empty");
  if (!(few_shot_ratio > 0.0 && few_shot_ratio <= 1.0)) throw ConfigError("few_shot_ratio must lie in (0, 1]");
  if (ssl.stage != train::Stage::Ssl || finetune.stage != train::Stage::Finetune) {
    throw ConfigError("manifest: stage plans are mislabeled");
  }
  ssl.validate();
  finetune.validate();
  model.validate();
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string ExperimentManifest::hash() const {
  json j = to_json();
  // Where results go and which seeds a given invocation runs do not change a run's outcome.
  j.erase("output_dir");
  j.erase("seeds");
  return fnv1a_hex(j.dump());
}

ExperimentManifest load_manifest(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::exception&) {
    throw ConfigError("cannot read manifest " + path.string());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return ExperimentManifest::from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override path crosses a non-object: " + path);
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (parts.empty() || parts.back().empty()) throw ConfigError("override has an empty key: " + assignment);
  (*node)[parts.back()] = value;
}

}  // namespace vimts::harness
