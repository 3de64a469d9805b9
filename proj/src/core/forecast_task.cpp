#include "vimts/core/forecast_task.hpp"

#include "vimts/errors.hpp"
#include "vimts/log.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace vimts::core {

std::size_t ForecastTask::history_count() const {
  std::size_t n = 0;
  for (const auto& h : history) n += h.size();
  return n;
}

std::size_t ForecastTask::query_count() const {
  std::size_t n = 0;
  for (const auto& q : queries) n += q.size();
  return n;
}

std::vector<ForecastTask> build_forecast_tasks(const ImtsDataset& ds, double obs_span, double horizon_span) {
  if (!(obs_span > 0.0) || horizon_span < 0.0 || obs_span + horizon_span > 1.0 + 1e-9) {
    throw ConfigError("build_forecast_tasks: obs_span + horizon_span must fit in the normalized span");
  }
  const double end = obs_span + horizon_span;
  std::vector<ForecastTask> tasks;
  std::size_t dropped = 0;
  std::size_t ignored_queries = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    ForecastTask task;
    task.sample_index = i;
    task.sample_id = s.id();
    const auto nc = static_cast<std::size_t>(s.channels());
    task.history.resize(nc);
    task.queries.resize(nc);
    for (std::size_t l = 0; l < s.length(); ++l) {
      const double t = s.timestamps()[l];
      for (int n = 0; n < s.channels(); ++n) {
        if (!s.observed(l, n)) continue;
        const Observation o{t, s.value(l, n)};
        if (t < obs_span) {
          task.history[static_cast<std::size_t>(n)].push_back(o);
        } else if (t <= end) {
          task.queries[static_cast<std::size_t>(n)].push_back(o);
        }
      }
    }
    for (std::size_t n = 0; n < nc; ++n) {
      for (const auto& q : s.queries()[n]) {
        if (q.time >= obs_span && q.time <= end) {
          task.queries[n].push_back(q);
        } else {
          ++ignored_queries;
        }
      }
      auto& qs = task.queries[n];
      std::sort(qs.begin(), qs.end(), [](const Observation& a, const Observation& b) { return a.time < b.time; });
    }
    if (task.history_count() == 0) {
      ++dropped;
      continue;
    }
    double max_hist = -std::numeric_limits<double>::infinity();
    double min_query = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < nc; ++n) {
      for (const auto& h : task.history[n]) max_hist = std::max(max_hist, h.time);
      for (const auto& q : task.queries[n]) min_query = std::min(min_query, q.time);
    }
    if (!(max_hist < min_query)) throw std::logic_error("forecast task for '" + s.id() + "' leaks queries into history");
    tasks.push_back(std::move(task));
  }
  if (dropped > 0) log::warn(std::to_string(dropped) + " samples without history observations were dropped");
  if (ignored_queries > 0) {
    log::warn(std::to_string(ignored_queries) + " stored queries outside the prediction horizon were ignored");
  }
  return tasks;
}

}  // namespace vimts::core
