#include "vimts/core/dataset.hpp"

#include "vimts/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vimts::core {
namespace {

// Sorts and deduplicates records by (channel, time); equal keys must carry equal values.
void dedupe(std::vector<Record>& recs, const std::string& sample_id, const char* kind) {
  std::stable_sort(recs.begin(), recs.end(), [](const Record& a, const Record& b) {
    return a.channel != b.channel ? a.channel < b.channel : a.time < b.time;
  });
  std::vector<Record> out;
  out.reserve(recs.size());
  for (const auto& r : recs) {
    if (!out.empty() && out.back().channel == r.channel && out.back().time == r.time) {
      if (out.back().value != r.value) {
        std::ostringstream msg;
        msg << "conflicting " << kind << " values for sample '" << sample_id << "', channel " << r.channel
            << ", time " << r.time << ": " << out.back().value << " vs " << r.value;
        throw DataConflictError(msg.str());
      }
      continue;
    }
    out.push_back(r);
  }
  recs = std::move(out);
}

}  // namespace

ImtsSample::ImtsSample(std::string id, int channels)
    : id_(std::move(id)), channels_(channels), queries_(static_cast<std::size_t>(channels)) {
  if (channels < 0) throw ConfigError("channel count must be non-negative");
}

ImtsSample ImtsSample::from_records(std::string id, int channels, std::vector<Record> observations,
                                    std::vector<Record> queries) {
  ImtsSample s(std::move(id), channels);
  for (const auto* recs : {&observations, &queries}) {
    for (const auto& r : *recs) {
      if (r.channel < 0 || r.channel >= channels) {
        throw ConfigError("channel index " + std::to_string(r.channel) + " out of range for sample '" + s.id_ + "'");
      }
      if (!std::isfinite(r.time) || !std::isfinite(r.value)) {
        throw ConfigError("non-finite time or value in sample '" + s.id_ + "'");
      }
    }
  }
  dedupe(observations, s.id_, "observation");
  dedupe(queries, s.id_, "query");

  std::vector<double> times;
  times.reserve(observations.size());
  for (const auto& r : observations) times.push_back(r.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());

  s.timestamps_ = times;
  s.values_.assign(times.size() * s.stride(), kUnobserved);
  s.mask_.assign(times.size() * s.stride(), 0);
  for (const auto& r : observations) {
    const auto row = static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), r.time) - times.begin());
    const auto cell = row * s.stride() + static_cast<std::size_t>(r.channel);
    s.values_[cell] = r.value;
    s.mask_[cell] = 1;
  }
  for (const auto& q : queries) {
    s.queries_[static_cast<std::size_t>(q.channel)].push_back(Observation{q.time, q.value});
  }
  return s;
}

std::vector<Observation> ImtsSample::channel_series(int channel) const {
  std::vector<Observation> out;
  for (std::size_t l = 0; l < length(); ++l) {
    if (observed(l, channel)) out.push_back(Observation{timestamps_[l], value(l, channel)});
  }
  return out;
}

std::size_t ImtsSample::observation_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

std::size_t ImtsSample::query_count() const {
  std::size_t n = 0;
  for (const auto& q : queries_) n += q.size();
  return n;
}

void ImtsSample::validate(bool require_unit_interval) const {
  auto fail = [this](const std::string& what) { throw std::logic_error("sample '" + id_ + "': " + what); };
  if (values_.size() != length() * stride() || mask_.size() != values_.size()) fail("triplet shape mismatch");
  if (queries_.size() != stride()) fail("query table must have one list per channel");
  for (std::size_t l = 0; l < length(); ++l) {
    if (l > 0 && !(timestamps_[l] > timestamps_[l - 1])) fail("timestamps not strictly increasing");
    bool any = false;
    for (int n = 0; n < channels_; ++n) {
      const bool m = observed(l, n);
      const double v = values_[l * stride() + static_cast<std::size_t>(n)];
      if (m == std::isnan(v)) fail("mask/value mismatch at row " + std::to_string(l));
      any = any || m;
    }
    if (!any) fail("row " + std::to_string(l) + " has no observation");
    if (require_unit_interval && (timestamps_[l] < 0.0 || timestamps_[l] > 1.0)) fail("timestamp outside [0,1]");
  }
  if (require_unit_interval) {
    for (const auto& qs : queries_) {
      for (const auto& q : qs) {
        if (q.time < 0.0 || q.time > 1.0) fail("query time outside [0,1]");
      }
    }
  }
}

ImtsDataset ImtsDataset::subset(const std::vector<std::size_t>& indices) const {
  ImtsDataset out;
  out.channel_count = channel_count;
  out.channel_names = channel_names;
  out.normalizer = normalizer;
  out.meta = meta;
  out.samples.reserve(indices.size());
  for (auto i : indices) out.samples.push_back(samples.at(i));
  return out;
}

double ImtsDataset::stored_missing_ratio() const {
  std::size_t cells = 0;
  std::size_t observed = 0;
  for (const auto& s : samples) {
    cells += s.length() * static_cast<std::size_t>(s.channels());
    observed += s.observation_count();
  }
  return cells == 0 ? 0.0 : 1.0 - static_cast<double>(observed) / static_cast<double>(cells);
}

void ImtsDataset::validate() const {
  for (const auto& s : samples) {
    if (s.channels() != channel_count) {
      throw std::logic_error("sample '" + s.id() + "' has " + std::to_string(s.channels()) + " channels, dataset has " +
                             std::to_string(channel_count));
    }
    s.validate();
  }
}

std::vector<std::string> default_channel_names(int channels) {
  std::vector<std::string> names;
  for (int n = 0; n < channels; ++n) names.push_back("ch" + std::to_string(n));
  return names;
}

}  // namespace vimts::core
