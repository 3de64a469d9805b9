#pragma once

// Canonical long-format CSV:
//
//   sample_id,channel_id,timestamp,value[,is_query]
//
// One row per observation. Query rows carry is_query=1, or live in a sibling
// file `<stem>.queries.csv` with the four base columns.

#include "vimts/core/dataset.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace vimts::core {

struct DatasetSchema {
  // When empty, channel ids found in the file are sorted and used as names.
  std::vector<std::string> channel_names;
  int channel_count = 0;
  // Window lengths in raw time units.
  double obs_span = 0.75;
  double horizon_span = 0.25;
  // Divide raw timestamps by obs_span + horizon_span.
  bool normalize_time = true;

  static DatasetSchema from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

ImtsDataset load_dataset(const std::filesystem::path& path, const DatasetSchema& schema);

// Writes observations to `path` and queries to the sibling queries file.
// Times are written in normalized units.
void write_dataset(const ImtsDataset& ds, const std::filesystem::path& path);

std::filesystem::path queries_path_for(const std::filesystem::path& path);

// Converts a wide CSV (sample_id,timestamp,<one column per channel>, empty
// cells = unobserved) into canonical long rows. Returns the channel names.
std::vector<std::string> convert_wide_csv(const std::filesystem::path& wide, const std::filesystem::path& canonical);

// Splits one CSV line; handles double-quoted fields.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace vimts::core
