#pragma once

// Time x channel patchify: equal-interval sectioning, learnable time
// embeddings, the time-aware convolution (TTCN) over each section's points,
// the availability bit and per-channel embeddings.
//
// Grids are laid out section-major: row (p-1)*N + n holds channel n of
// section p, so one section's N rows are contiguous for the channel graph.

#include "vimts/autodiff.hpp"
#include "vimts/core/dataset.hpp"
#include "vimts/geometry.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace vimts::patchify {

using ad::Matrix;
using ad::Tape;
using ad::Var;

struct PatchifyConfig {
  int channels = 3;
  int time_dim = 8;     // D_te
  int feature_dim = 8;  // D_in; patch width D = D_in + 1

  int patch_dim() const { return feature_dim + 1; }
  int point_dim() const { return time_dim + 1; }
  int meta_hidden() const { return 2 * point_dim(); }
  void validate() const;
};

struct TimeEmbedParams {
  std::vector<double> omega;
  std::vector<double> alpha;
};

// φ(t): component 0 is ω_0 t + α_0, the rest sin(ω_d t + α_d).
std::vector<double> time_embed(double t, const TimeEmbedParams& params);

// [channel][section-1] -> time-sorted points of that section.
using SectionedPoints = std::vector<std::vector<std::vector<core::Observation>>>;

// Assigns each observation to the half-open section containing it; an
// observation exactly on the far edge of section `sections` joins that section.
// Observations outside the sectioned span throw std::out_of_range.
SectionedPoints divide_sections(const std::vector<std::vector<core::Observation>>& per_channel,
                                const SectionGeometry& geometry, int sections);
SectionedPoints divide_sections(const core::ImtsSample& sample, const SectionGeometry& geometry, int sections);

struct PatchGrid {
  Matrix features;                      // (P*N) x D, section-major
  std::vector<std::uint8_t> mask_bits;  // P*N, same order
  std::vector<double> section_starts;   // P
  double section_size = 0.0;
  int channels = 0;
  int sections = 0;

  auto feature(int channel, int section) const {
    return features.row(static_cast<Eigen::Index>((section - 1) * channels + channel));
  }
  bool mask(int channel, int section) const {
    return mask_bits[static_cast<std::size_t>((section - 1) * channels + channel)] != 0;
  }
};

struct PatchGridVar {
  Var features;  // (P*N) x D
  std::vector<std::uint8_t> mask_bits;
};

class Patchify {
 public:
  Patchify() = default;
  Patchify(ad::ParameterSet& params, const PatchifyConfig& config, std::mt19937_64& rng,
           const std::string& prefix = "patchify");

  const PatchifyConfig& config() const { return config_; }

  // n x D_te embeddings of the given times.
  Var time_embed(Tape& tape, std::span<const double> times) const;

  // Time-aware convolution of consecutive point segments. `points` is
  // (n x (D_te+1)) rows [φ(t) | x]; segment k spans rows [offsets[k], offsets[k+1]).
  // Returns one D_in row per segment. Segments must be non-empty.
  Var ttcn(Tape& tape, Var points, std::span<const int> offsets) const;

  // Softmax filter weights for a segment layout (same shape as the scores).
  Var ttcn_weights(Tape& tape, Var points, std::span<const int> offsets) const;

  PatchGridVar assemble(Tape& tape, const SectionedPoints& sectioned, int sections) const;

  TimeEmbedParams time_params(const ad::ParameterSet& params) const;

  ad::ParamId omega() const { return omega_; }
  ad::ParamId alpha() const { return alpha_; }
  ad::ParamId channel_table() const { return channel_table_; }

 private:
  Var points_for(Tape& tape, const std::vector<core::Observation>& pts) const;

  PatchifyConfig config_;
  ad::ParamId omega_ = -1;
  ad::ParamId alpha_ = -1;
  ad::ParamId fc1_w_ = -1;
  ad::ParamId fc1_b_ = -1;
  ad::ParamId fc2_w_ = -1;
  ad::ParamId fc2_b_ = -1;
  ad::ParamId value_w_ = -1;
  ad::ParamId channel_table_ = -1;
};

// Value-level helpers running one forward pass on a scratch tape.
std::vector<double> ttcn_patch(const Patchify& module, const ad::ParameterSet& params,
                               const std::vector<core::Observation>& points);
PatchGrid assemble_patch_grid(const Patchify& module, const ad::ParameterSet& params,
                              const std::vector<std::vector<core::Observation>>& per_channel,
                              const SectionGeometry& geometry, int sections);

}  // namespace vimts::patchify
