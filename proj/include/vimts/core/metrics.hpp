#pragma once

#include <span>
#include <vector>

namespace vimts::core {

// Pooled over every query: (1/|Q|) Σ (pred - target)^2.
double mse(std::span<const double> preds, std::span<const double> targets);
double mae(std::span<const double> preds, std::span<const double> targets);

// Mean over channels that own at least one query of the per-channel MSE.
// This is the training-loss nesting; evaluation uses the pooled mse().
double channel_mean_mse(std::span<const double> preds, std::span<const double> targets, std::span<const int> channels,
                        int channel_count);

}  // namespace vimts::core
