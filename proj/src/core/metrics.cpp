#include "vimts/core/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace vimts::core {
namespace {
void check(std::span<const double> p, std::span<const double> t) {
  if (p.size() != t.size()) throw std::invalid_argument("metric: prediction/target length mismatch");
  if (p.empty()) throw std::invalid_argument("metric: empty query set");
}
}  // namespace

double mse(std::span<const double> preds, std::span<const double> targets) {
  check(preds, targets);
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - targets[i];
    s += d * d;
  }
  return s / static_cast<double>(preds.size());
}

double mae(std::span<const double> preds, std::span<const double> targets) {
  check(preds, targets);
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - targets[i]);
  return s / static_cast<double>(preds.size());
}

double channel_mean_mse(std::span<const double> preds, std::span<const double> targets, std::span<const int> channels,
                        int channel_count) {
  check(preds, targets);
  if (channels.size() != preds.size()) throw std::invalid_argument("metric: channel list length mismatch");
  std::vector<double> sum(static_cast<std::size_t>(channel_count), 0.0);
  std::vector<int> count(static_cast<std::size_t>(channel_count), 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto c = static_cast<std::size_t>(channels[i]);
    const double d = preds[i] - targets[i];
    sum.at(c) += d * d;
    ++count.at(c);
  }
  double total = 0.0;
  int active = 0;
  for (std::size_t c = 0; c < sum.size(); ++c) {
    if (count[c] == 0) continue;
    total += sum[c] / count[c];
    ++active;
  }
  return total / active;
}

}  // namespace vimts::core
