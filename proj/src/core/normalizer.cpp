#include "vimts/core/normalizer.hpp"

#include "vimts/errors.hpp"
#include "vimts/log.hpp"

#include <algorithm>
#include <limits>

namespace vimts::core {

NormalizerStats fit_normalizer(const ImtsDataset& train) {
  const auto n = static_cast<std::size_t>(train.channel_count);
  NormalizerStats stats;
  stats.min.assign(n, std::numeric_limits<double>::infinity());
  stats.max.assign(n, -std::numeric_limits<double>::infinity());
  auto see = [&](int c, double v) {
    auto& lo = stats.min[static_cast<std::size_t>(c)];
    auto& hi = stats.max[static_cast<std::size_t>(c)];
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  };
  for (const auto& s : train.samples) {
    for (std::size_t l = 0; l < s.length(); ++l) {
      for (int c = 0; c < s.channels(); ++c) {
        if (s.observed(l, c)) see(c, s.value(l, c));
      }
    }
    for (int c = 0; c < s.channels(); ++c) {
      for (const auto& q : s.queries()[static_cast<std::size_t>(c)]) see(c, q.value);
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (stats.min[c] > stats.max[c]) {
      throw ConfigError("fit_normalizer: channel " + std::to_string(c) + " has no training observations");
    }
    if (stats.min[c] == stats.max[c]) {
      log::warn("fit_normalizer: channel " + std::to_string(c) + " is constant; mapping it to 0.5");
    }
  }
  stats.fitted_on_train = true;
  return stats;
}

double normalize_value(const NormalizerStats& stats, int channel, double raw) {
  const auto c = static_cast<std::size_t>(channel);
  const double span = stats.max[c] - stats.min[c];
  if (span == 0.0) return 0.5;
  return (raw - stats.min[c]) / span;
}

double denormalize_value(const NormalizerStats& stats, int channel, double normalized) {
  const auto c = static_cast<std::size_t>(channel);
  const double span = stats.max[c] - stats.min[c];
  if (span == 0.0) return stats.min[c];
  return normalized * span + stats.min[c];
}

ImtsDataset apply_normalizer(const ImtsDataset& ds, const NormalizerStats& stats) {
  if (static_cast<int>(stats.min.size()) != ds.channel_count) throw ConfigError("normalizer channel count mismatch");
  ImtsDataset out = ds;
  for (auto& s : out.samples) s.transform_values([&](int c, double v) { return normalize_value(stats, c, v); });
  out.normalizer = stats;
  return out;
}

ImtsDataset invert_normalizer(const ImtsDataset& ds, const NormalizerStats& stats) {
  if (static_cast<int>(stats.min.size()) != ds.channel_count) throw ConfigError("normalizer channel count mismatch");
  ImtsDataset out = ds;
  for (auto& s : out.samples) s.transform_values([&](int c, double v) { return denormalize_value(stats, c, v); });
  out.normalizer.reset();
  return out;
}

}  // namespace vimts::core
