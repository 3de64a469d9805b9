#pragma once

#include "vimts/core/dataset.hpp"

#include <string>
#include <vector>

namespace vimts::core {

// History O and queries Q of one sample, split at the observation boundary.
struct ForecastTask {
  std::size_t sample_index = 0;
  std::string sample_id;
  std::vector<std::vector<Observation>> history;  // per channel, t < boundary
  std::vector<std::vector<Observation>> queries;  // per channel, boundary <= t <= boundary + horizon

  int channels() const { return static_cast<int>(history.size()); }
  std::size_t history_count() const;
  std::size_t query_count() const;
};

// Observations with t < obs_span form the history; stored observations and
// queries in [obs_span, obs_span + horizon_span] form the query set. Samples
// without history are dropped with a warning. Throws std::logic_error if a
// constructed task would leak a query into its history.
std::vector<ForecastTask> build_forecast_tasks(const ImtsDataset& ds, double obs_span, double horizon_span);

inline std::vector<ForecastTask> build_forecast_tasks(const ImtsDataset& ds) {
  return build_forecast_tasks(ds, ds.meta.obs_span, ds.meta.horizon_span);
}

}  // namespace vimts::core
