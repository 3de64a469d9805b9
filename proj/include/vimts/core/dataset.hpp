#pragma once

// Irregular multivariate time series data model.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace vimts::core {

// Marks unobserved cells in ImtsSample::values. Arithmetic always goes through
// the mask, so this value never reaches a computation.
inline constexpr double kUnobserved = std::numeric_limits<double>::quiet_NaN();

struct Observation {
  double time = 0.0;
  double value = 0.0;

  friend bool operator==(const Observation&, const Observation&) = default;
};

// One raw record before merging: (channel, time, value).
struct Record {
  int channel = 0;
  double time = 0.0;
  double value = 0.0;
};

// Triplet (timestamps, values, mask) plus per-channel query sets.
class ImtsSample {
 public:
  ImtsSample() = default;
  ImtsSample(std::string id, int channels);

  // Merges records sharing a timestamp into one row and sorts rows by time.
  // Exact duplicates collapse; conflicting duplicates throw DataConflictError.
  static ImtsSample from_records(std::string id, int channels, std::vector<Record> observations,
                                 std::vector<Record> queries = {});

  const std::string& id() const { return id_; }
  int channels() const { return channels_; }
  std::size_t length() const { return timestamps_.size(); }

  const std::vector<double>& timestamps() const { return timestamps_; }
  bool observed(std::size_t row, int channel) const { return mask_[row * stride() + static_cast<std::size_t>(channel)] != 0; }
  // Precondition: observed(row, channel).
  double value(std::size_t row, int channel) const { return values_[row * stride() + static_cast<std::size_t>(channel)]; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }
  const std::vector<double>& values() const { return values_; }

  // Observed (time, value) pairs of one channel in time order.
  std::vector<Observation> channel_series(int channel) const;
  std::size_t observation_count() const;

  const std::vector<std::vector<Observation>>& queries() const { return queries_; }
  std::size_t query_count() const;

  // Applies f(channel, value) to every observed value and query target.
  template <class F>
  void transform_values(F&& f) {
    for (std::size_t l = 0; l < length(); ++l) {
      for (int n = 0; n < channels_; ++n) {
        auto& v = values_[l * stride() + static_cast<std::size_t>(n)];
        if (observed(l, n)) v = f(n, v);
      }
    }
    for (int n = 0; n < channels_; ++n) {
      for (auto& q : queries_[static_cast<std::size_t>(n)]) q.value = f(n, q.value);
    }
  }

  // Applies g(time) to every timestamp and query time; g must be increasing.
  template <class G>
  void transform_times(G&& g) {
    for (auto& t : timestamps_) t = g(t);
    for (auto& qs : queries_) {
      for (auto& q : qs) q.time = g(q.time);
    }
  }

  // Throws std::logic_error naming the first violated invariant.
  void validate(bool require_unit_interval = false) const;

 private:
  std::size_t stride() const { return static_cast<std::size_t>(channels_); }

  std::string id_;
  int channels_ = 0;
  std::vector<double> timestamps_;
  std::vector<double> values_;
  std::vector<std::uint8_t> mask_;
  std::vector<std::vector<Observation>> queries_;
};

struct NormalizerStats {
  std::vector<double> min;
  std::vector<double> max;
  bool fitted_on_train = false;
};

struct DatasetMeta {
  // Observation window and prediction horizon in normalized time units.
  double obs_span = 0.75;
  double horizon_span = 0.25;
  // Raw time units per normalized unit (1 when data were generated normalized).
  double time_scale = 1.0;
};

struct ImtsDataset {
  std::vector<ImtsSample> samples;
  int channel_count = 0;
  std::vector<std::string> channel_names;
  std::optional<NormalizerStats> normalizer;
  DatasetMeta meta;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  // Copy with the same metadata and only the listed samples, in list order.
  ImtsDataset subset(const std::vector<std::size_t>& indices) const;

  // Fraction of unobserved cells over all stored rows.
  double stored_missing_ratio() const;

  void validate() const;
};

std::vector<std::string> default_channel_names(int channels);

}  // namespace vimts::core
