#include "vimts/core/dataset_io.hpp"

#include "vimts/errors.hpp"
#include "vimts/fileio.hpp"
#include "vimts/log.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace vimts::core {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double parse_real(const std::string& text, const std::string& file, std::size_t line, const char* column) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\r')) --last;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) {
    throw ParseError(file, line, std::string("cannot parse ") + column + " '" + text + "'");
  }
  return v;
}

struct RawRow {
  std::string sample;
  std::string channel;
  double time;
  double value;
  bool query;
};

// Reads canonical rows; `force_query` marks every row as a query.
void read_rows(const fs::path& path, bool force_query, std::vector<RawRow>& out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string file = path.string();
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) return;
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* required : {"sample_id", "channel_id", "timestamp", "value"}) {
    if (!col.contains(required)) throw ParseError(file, 1, std::string("missing column '") + required + "'");
  }
  const bool has_query_col = col.contains("is_query");
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError(file, lineno,
                       "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    RawRow r;
    r.sample = fields[col["sample_id"]];
    r.channel = fields[col["channel_id"]];
    if (r.sample.empty() || r.channel.empty()) throw ParseError(file, lineno, "empty sample_id or channel_id");
    r.time = parse_real(fields[col["timestamp"]], file, lineno, "timestamp");
    r.value = parse_real(fields[col["value"]], file, lineno, "value");
    if (!std::isfinite(r.time) || !std::isfinite(r.value)) throw ParseError(file, lineno, "non-finite number");
    r.query = force_query;
    if (has_query_col) {
      const auto& q = fields[col["is_query"]];
      if (q == "1" || q == "true") {
        r.query = true;
      } else if (!(q == "0" || q == "false" || q.empty())) {
        throw ParseError(file, lineno, "is_query must be 0 or 1, got '" + q + "'");
      }
    }
    out.push_back(std::move(r));
  }
}

std::string fmt_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

DatasetSchema DatasetSchema::from_json(const json& j) {
  DatasetSchema s;
  if (j.contains("channel_names")) s.channel_names = j.at("channel_names").get<std::vector<std::string>>();
  s.channel_count = j.value("channel_count", static_cast<int>(s.channel_names.size()));
  s.obs_span = j.value("obs_span", s.obs_span);
  s.horizon_span = j.value("horizon_span", s.horizon_span);
  s.normalize_time = j.value("normalize_time", s.normalize_time);
  if (!s.channel_names.empty() && s.channel_count != static_cast<int>(s.channel_names.size())) {
    throw ConfigError("schema: channel_count disagrees with channel_names");
  }
  if (s.obs_span <= 0.0 || s.horizon_span < 0.0) throw ConfigError("schema: spans must be positive");
  return s;
}

json DatasetSchema::to_json() const {
  return json{{"channel_names", channel_names},
              {"channel_count", channel_count},
              {"obs_span", obs_span},
              {"horizon_span", horizon_span},
              {"normalize_time", normalize_time}};
}

fs::path queries_path_for(const fs::path& path) {
  auto stem = path;
  if (stem.extension() == ".csv") stem.replace_extension();
  stem += ".queries.csv";
  return stem;
}

ImtsDataset load_dataset(const fs::path& path, const DatasetSchema& schema) {
  std::vector<RawRow> rows;
  read_rows(path, false, rows);
  const auto qpath = queries_path_for(path);
  if (fs::exists(qpath)) read_rows(qpath, true, rows);

  ImtsDataset ds;
  ds.channel_names = schema.channel_names;
  if (ds.channel_names.empty()) {
    std::set<std::string> found;
    for (const auto& r : rows) found.insert(r.channel);
    ds.channel_names.assign(found.begin(), found.end());
    for (int n = static_cast<int>(ds.channel_names.size()); n < schema.channel_count; ++n) {
      ds.channel_names.push_back("ch" + std::to_string(n));
    }
  }
  ds.channel_count = static_cast<int>(ds.channel_names.size());
  std::unordered_map<std::string, int> channel_index;
  for (int n = 0; n < ds.channel_count; ++n) channel_index[ds.channel_names[static_cast<std::size_t>(n)]] = n;

  const double total = schema.obs_span + schema.horizon_span;
  const double scale = schema.normalize_time ? total : 1.0;
  ds.meta.time_scale = scale;
  ds.meta.obs_span = schema.obs_span / scale;
  ds.meta.horizon_span = schema.horizon_span / scale;

  std::vector<std::string> order;
  std::unordered_map<std::string, std::pair<std::vector<Record>, std::vector<Record>>> by_sample;
  std::size_t dropped = 0;
  for (const auto& r : rows) {
    auto it = channel_index.find(r.channel);
    if (it == channel_index.end()) {
      throw DataConflictError("channel '" + r.channel + "' not declared in schema");
    }
    const double t = r.time / scale;
    if (t < 0.0 || t > 1.0 + 1e-12) {
      ++dropped;
      continue;
    }
    auto [slot, inserted] = by_sample.try_emplace(r.sample);
    if (inserted) order.push_back(r.sample);
    (r.query ? slot->second.second : slot->second.first).push_back(Record{it->second, std::min(t, 1.0), r.value});
  }
  if (dropped > 0) log::warn(std::to_string(dropped) + " rows outside the observation+horizon window were dropped");

  for (const auto& id : order) {
    auto& [obs, qs] = by_sample[id];
    ds.samples.push_back(ImtsSample::from_records(id, ds.channel_count, std::move(obs), std::move(qs)));
  }
  ds.validate();
  return ds;
}

void write_dataset(const ImtsDataset& ds, const fs::path& path) {
  std::ostringstream obs;
  std::ostringstream qs;
  obs << "sample_id,channel_id,timestamp,value\n";
  qs << "sample_id,channel_id,timestamp,value\n";
  for (const auto& s : ds.samples) {
    for (std::size_t l = 0; l < s.length(); ++l) {
      for (int n = 0; n < s.channels(); ++n) {
        if (!s.observed(l, n)) continue;
        obs << s.id() << ',' << ds.channel_names[static_cast<std::size_t>(n)] << ',' << fmt_real(s.timestamps()[l]) << ','
            << fmt_real(s.value(l, n)) << '\n';
      }
    }
    for (int n = 0; n < s.channels(); ++n) {
      for (const auto& q : s.queries()[static_cast<std::size_t>(n)]) {
        qs << s.id() << ',' << ds.channel_names[static_cast<std::size_t>(n)] << ',' << fmt_real(q.time) << ','
           << fmt_real(q.value) << '\n';
      }
    }
  }
  io::write_atomic(path, obs.str());
  io::write_atomic(queries_path_for(path), qs.str());
}

std::vector<std::string> convert_wide_csv(const fs::path& wide, const fs::path& canonical) {
  std::ifstream in(wide);
  if (!in) throw std::runtime_error("cannot open " + wide.string());
  const std::string file = wide.string();
  std::string line;
  if (!std::getline(in, line)) throw ParseError(file, 1, "empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "timestamp") {
    throw ParseError(file, 1, "wide header must be sample_id,timestamp,<channels...>");
  }
  std::vector<std::string> channels(header.begin() + 2, header.end());
  std::ostringstream out;
  out << "sample_id,channel_id,timestamp,value\n";
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != header.size()) throw ParseError(file, lineno, "field count mismatch");
    const double t = parse_real(f[1], file, lineno, "timestamp");
    for (std::size_t c = 0; c < channels.size(); ++c) {
      const auto& cell = f[c + 2];
      if (cell.empty() || cell == "NA" || cell == "nan") continue;
      const double v = parse_real(cell, file, lineno, "value");
      out << f[0] << ',' << channels[c] << ',' << fmt_real(t) << ',' << fmt_real(v) << '\n';
    }
  }
  io::write_atomic(canonical, out.str());
  return channels;
}

}  // namespace vimts::core
