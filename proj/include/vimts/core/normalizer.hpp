#pragma once

#include "vimts/core/dataset.hpp"

namespace vimts::core {

// Per-channel min-max statistics over every observed value and query target of
// the (training) dataset. Constant channels map to 0.5 with a warning.
NormalizerStats fit_normalizer(const ImtsDataset& train);

ImtsDataset apply_normalizer(const ImtsDataset& ds, const NormalizerStats& stats);
ImtsDataset invert_normalizer(const ImtsDataset& ds, const NormalizerStats& stats);

double normalize_value(const NormalizerStats& stats, int channel, double raw);
double denormalize_value(const NormalizerStats& stats, int channel, double normalized);

}  // namespace vimts::core
