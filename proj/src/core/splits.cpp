#include "vimts/core/splits.hpp"

#include "vimts/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace vimts::core {

SplitResult split_dataset(const ImtsDataset& ds, std::array<double, 3> ratios, std::uint64_t seed) {
  if (ds.size() < 3) throw ConfigError("split_dataset: need at least 3 samples, have " + std::to_string(ds.size()));
  for (double r : ratios) {
    if (r < 0.0 || r > 1.0) throw ConfigError("split_dataset: ratios must lie in [0,1]");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw ConfigError("split_dataset: ratios must sum to 1");
  }
  const std::size_t n = ds.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n))));
  const auto n_val =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n))));

  SplitResult out;
  out.train_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                         perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  out.train = ds.subset(out.train_indices);
  out.val = ds.subset(out.val_indices);
  out.test = ds.subset(out.test_indices);
  return out;
}

ImtsDataset few_shot_subset(const ImtsDataset& train, double ratio, std::uint64_t seed,
                            std::vector<std::size_t>* chosen) {
  if (!(ratio > 0.0) || ratio > 1.0) throw ConfigError("few_shot_subset: ratio must be in (0,1]");
  const double want = ratio * static_cast<double>(train.size());
  if (want < 1.0 - 1e-12) throw ConfigError("few_shot_subset: ratio selects fewer than one sample");
  const auto k = std::min(train.size(), static_cast<std::size_t>(std::ceil(want - 1e-9)));
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (k < train.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
  }
  if (chosen != nullptr) *chosen = idx;
  return train.subset(idx);
}

}  // namespace vimts::core
