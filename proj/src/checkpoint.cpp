#include "vimts/checkpoint.hpp"

#include "vimts/errors.hpp"
#include "vimts/fileio.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

namespace vimts::checkpoint {
namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

std::string join(const std::vector<std::string>& items, std::size_t limit = 20) {
  std::string out;
  for (std::size_t i = 0; i < items.size() && i < limit; ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  if (items.size() > limit) out += ", ... (" + std::to_string(items.size()) + " total)";
  return out;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

// Drops leading unit dimensions beyond two so [1,1,512] reads as 1x512.
std::pair<Eigen::Index, Eigen::Index> as_matrix_shape(const std::vector<std::int64_t>& shape) {
  if (shape.empty()) return {1, 1};
  if (shape.size() == 1) return {1, shape[0]};
  std::int64_t rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return {rows, shape.back()};
}

}  // namespace

SafetensorsFile read_safetensors(const fs::path& path) {
  const std::string bytes = io::read_file(path);
  if (bytes.size() < 8) throw ConfigError("checkpoint " + path.string() + ": truncated header");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  if (header_len > bytes.size() - 8) throw ConfigError("checkpoint " + path.string() + ": header length out of range");
  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + ": bad header: " + e.what());
  }
  const std::size_t base = 8 + header_len;
  SafetensorsFile out;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      for (auto m = it->begin(); m != it->end(); ++m) out.metadata[m.key()] = m->get<std::string>();
      continue;
    }
    const std::string dtype = it->at("dtype").get<std::string>();
    Tensor t;
    t.shape = it->at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = it->at("data_offsets").get<std::vector<std::uint64_t>>();
    if (offsets.size() != 2 || offsets[1] < offsets[0] || base + offsets[1] > bytes.size()) {
      throw ConfigError("checkpoint " + path.string() + ": bad offsets for " + it.key());
    }
    std::size_t numel = 1;
    for (auto d : t.shape) numel *= static_cast<std::size_t>(d);
    const std::size_t width = dtype == "F64" ? 8 : dtype == "F32" ? 4 : 0;
    if (width == 0) throw ConfigError("checkpoint " + path.string() + ": unsupported dtype " + dtype + " for " + it.key());
    if (offsets[1] - offsets[0] != numel * width) {
      throw ConfigError("checkpoint " + path.string() + ": size mismatch for " + it.key());
    }
    t.data.resize(numel);
    const char* src = bytes.data() + base + offsets[0];
    if (width == 8) {
      std::memcpy(t.data.data(), src, numel * 8);
    } else {
      for (std::size_t i = 0; i < numel; ++i) {
        float f = 0.0F;
        std::memcpy(&f, src + i * 4, 4);
        t.data[i] = f;
      }
    }
    out.tensors.emplace(it.key(), std::move(t));
  }
  return out;
}

void write_safetensors(const fs::path& path, const TensorMap& tensors, const std::map<std::string, std::string>& metadata,
                       bool f32) {
  json header = json::object();
  if (!metadata.empty()) header["__metadata__"] = metadata;
  const std::size_t width = f32 ? 4 : 8;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t len = t.data.size() * width;
    header[name] = {{"dtype", f32 ? "F32" : "F64"}, {"shape", t.shape}, {"data_offsets", {offset, offset + len}}};
    offset += len;
  }
  std::string head = header.dump();
  while ((head.size() + 8) % 8 != 0) head.push_back(' ');
  std::string bytes(8, '\0');
  const std::uint64_t hl = head.size();
  std::memcpy(bytes.data(), &hl, 8);
  bytes += head;
  bytes.reserve(bytes.size() + offset);
  for (const auto& [name, t] : tensors) {
    if (f32) {
      for (double v : t.data) {
        const auto f = static_cast<float>(v);
        bytes.append(reinterpret_cast<const char*>(&f), 4);
      }
    } else {
      bytes.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * 8);
    }
  }
  io::write_atomic(path, bytes);
}

Tensor to_tensor(const ad::Matrix& m) {
  return Tensor{{m.rows(), m.cols()}, std::vector<double>(m.data(), m.data() + m.size())};
}

void save_parameters(const ad::ParameterSet& params, const fs::path& path,
                     const std::map<std::string, std::string>& metadata) {
  TensorMap tensors;
  for (const auto& p : params) tensors.emplace(p.name, to_tensor(p.value));
  write_safetensors(path, tensors, metadata);
}

LoadReport load_parameters(ad::ParameterSet& params, const fs::path& path, bool strict) {
  const auto file = read_safetensors(path);
  LoadReport report;
  for (auto& p : params) {
    const auto it = file.tensors.find(p.name);
    if (it == file.tensors.end()) {
      report.missing.push_back(p.name);
      continue;
    }
    const auto [r, c] = as_matrix_shape(it->second.shape);
    if (r != p.value.rows() || c != p.value.cols()) {
      throw ConfigError("checkpoint " + path.string() + ": shape mismatch for " + p.name + ": file " +
                        shape_str(it->second.shape) + ", model [" + std::to_string(p.value.rows()) + "," +
                        std::to_string(p.value.cols()) + "]");
    }
    std::copy(it->second.data.begin(), it->second.data.end(), p.value.data());
    report.loaded.push_back(p.name);
  }
  for (const auto& [name, t] : file.tensors) {
    if (!params.contains(name)) report.unexpected.push_back(name);
  }
  if (strict && !report.missing.empty()) {
    throw ConfigError("checkpoint " + path.string() + " lacks parameters: " + join(report.missing));
  }
  if (strict && !report.unexpected.empty()) {
    throw ConfigError("checkpoint " + path.string() + " has unknown parameters: " + join(report.unexpected));
  }
  return report;
}

std::vector<KeyMapEntry> read_keymap(const fs::path& path) {
  std::istringstream in(io::read_file(path));
  std::vector<KeyMapEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, '\t')) cols.push_back(cell);
    if (cols.size() != 3) throw ParseError(path.string(), lineno, "expected 3 tab-separated columns");
    if (cols[2] != "0" && cols[2] != "1") throw ParseError(path.string(), lineno, "transpose flag must be 0 or 1");
    out.push_back(KeyMapEntry{cols[0], cols[1] == "-" ? std::string{} : cols[1], cols[2] == "1"});
  }
  return out;
}

fs::path default_keymap_path() { return fs::path(VIMTS_DATA_DIR) / "mae_base_keymap.tsv"; }

double PretrainedManifest::mapped_fraction() const {
  const std::size_t eligible = checkpoint_keys - excluded.size();
  return eligible == 0 ? 0.0 : static_cast<double>(mapped.size()) / static_cast<double>(eligible);
}

json PretrainedManifest::to_json() const {
  return json{{"checkpoint", checkpoint},
              {"checkpoint_keys", checkpoint_keys},
              {"excluded", excluded},
              {"mapped_keys", mapped.size()},
              {"mapped_fraction", mapped_fraction()},
              {"loaded", loaded},
              {"fresh", fresh}};
}

PretrainedManifest load_pretrained(ad::ParameterSet& params, const std::string& prefix, const fs::path& checkpoint,
                                   const fs::path& keymap) {
  const auto entries = read_keymap(keymap);
  struct Compiled {
    std::regex source;
    std::regex target;
    const KeyMapEntry* entry;
  };
  auto to_regex = [](const std::string& tmpl) {
    std::string rx;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
      if (tmpl.compare(i, 3, "{i}") == 0) {
        rx += "([0-9]+)";
        i += 2;
      } else if (std::string(".[]()*+?^$|\\").find(tmpl[i]) != std::string::npos) {
        rx += '\\';
        rx += tmpl[i];
      } else {
        rx += tmpl[i];
      }
    }
    return std::regex(rx);
  };
  std::vector<Compiled> compiled;
  for (const auto& e : entries) {
    compiled.push_back(Compiled{to_regex(e.source), e.target.empty() ? std::regex("$^") : to_regex(prefix + "." + e.target), &e});
  }

  const auto file = read_safetensors(checkpoint);
  PretrainedManifest m;
  m.checkpoint = checkpoint.string();
  m.checkpoint_keys = file.tensors.size();
  std::vector<std::string> unmapped;
  std::vector<std::string> absent_targets;
  std::set<std::string> loaded;

  for (const auto& [key, tensor] : file.tensors) {
    const Compiled* hit = nullptr;
    std::smatch match;
    for (const auto& c : compiled) {
      if (std::regex_match(key, match, c.source)) {
        hit = &c;
        break;
      }
    }
    if (!hit) {
      unmapped.push_back(key);
      continue;
    }
    if (hit->entry->target.empty()) {
      m.excluded.push_back(key);
      continue;
    }
    std::string target = prefix + "." + hit->entry->target;
    if (const auto pos = target.find("{i}"); pos != std::string::npos) target.replace(pos, 3, match[1].str());
    const auto id = params.find(target);
    if (!id) {
      absent_targets.push_back(key + " -> " + target);
      continue;
    }
    auto& p = params[*id];
    auto [r, c] = as_matrix_shape(tensor.shape);
    ad::Matrix value = Eigen::Map<const ad::Matrix>(tensor.data.data(), r, c);
    if (hit->entry->transpose) value.transposeInPlace();
    if (value.rows() != p.value.rows() || value.cols() != p.value.cols()) {
      throw ConfigError("pretrained checkpoint: shape mismatch for " + target + " (from " + key + " " +
                        shape_str(tensor.shape) + "): model expects [" + std::to_string(p.value.rows()) + "," +
                        std::to_string(p.value.cols()) + "]");
    }
    p.value = std::move(value);
    m.mapped.push_back(key);
    loaded.insert(target);
  }
  if (!unmapped.empty()) throw ConfigError("pretrained checkpoint: keys without a mapping: " + join(unmapped));
  if (!absent_targets.empty()) {
    throw ConfigError("pretrained checkpoint: keys map to parameters the model lacks (depth mismatch?): " +
                      join(absent_targets));
  }

  // Every backbone parameter some keymap target covers must have been loaded.
  std::vector<std::string> missing;
  for (const auto& p : params) {
    if (p.name.rfind(prefix + ".", 0) != 0) continue;
    if (loaded.count(p.name)) {
      m.loaded.push_back(p.name);
      continue;
    }
    const bool expected = std::any_of(compiled.begin(), compiled.end(), [&](const Compiled& c) {
      return !c.entry->target.empty() && std::regex_match(p.name, c.target);
    });
    if (expected) {
      missing.push_back(p.name);
    } else {
      m.fresh.push_back(p.name);
    }
  }
  if (!missing.empty()) throw ConfigError("pretrained checkpoint: missing keys for " + join(missing));
  return m;
}

}  // namespace vimts::checkpoint
