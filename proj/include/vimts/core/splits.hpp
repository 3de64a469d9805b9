#pragma once

#include "vimts/core/dataset.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace vimts::core {

struct SplitResult {
  ImtsDataset train;
  ImtsDataset val;
  ImtsDataset test;
  // Indices into the source dataset, in the order samples appear in each split.
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
  std::vector<std::size_t> test_indices;
};

// Sample-level, disjoint and exhaustive split under a seeded permutation.
// Train and val sizes are round(ratio * n); test takes the remainder.
SplitResult split_dataset(const ImtsDataset& ds, std::array<double, 3> ratios, std::uint64_t seed);

// ceil(ratio * |train|) samples drawn without replacement, kept in source order.
ImtsDataset few_shot_subset(const ImtsDataset& train, double ratio, std::uint64_t seed,
                            std::vector<std::size_t>* chosen = nullptr);

}  // namespace vimts::core
