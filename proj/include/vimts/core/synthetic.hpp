#pragma once

// Synthetic IMTS generator with an exactly evaluable ground truth.
//
// Every channel mixes a few latent sinusoids shared by all channels of a
// sample (plus an optional private sinusoid). Sampling instants come from a
// homogeneous Poisson process over the whole window; each (instant, channel)
// cell is then kept with probability 1 - missing_ratio. Kept cells before the
// observation boundary become noisy observations; kept cells in the horizon
// become queries whose targets are the noise-free oracle values.

#include "vimts/core/dataset.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace vimts::core {

struct SyntheticConfig {
  int channels = 3;
  int samples = 100;
  int latents = 2;
  double missing_ratio = 0.7;
  double obs_span = 0.75;
  double horizon_span = 0.25;
  // Expected number of sampling instants per unit of normalized time.
  double rate = 64.0;
  double noise = 0.05;
  // Latent frequencies in cycles per unit time, drawn once per dataset.
  double freq_min = 1.0;
  double freq_max = 3.0;
  // Weight of shared latents versus each channel's private sinusoid, in [0,1].
  double coupling = 1.0;
  int max_retries = 100;

  static SyntheticConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

class SyntheticOracle {
 public:
  struct SampleLatents {
    std::vector<double> amplitude;  // latents + channels (private terms last)
    std::vector<double> phase;
    std::size_t grid_instants = 0;
  };

  SyntheticOracle() = default;
  SyntheticOracle(SyntheticConfig config, std::uint64_t seed, std::vector<double> frequencies,
                  std::vector<double> private_frequencies, std::vector<double> mixing,
                  std::vector<SampleLatents> samples);

  // Noise-free value of `channel` in sample `sample` at normalized time t.
  double value(std::size_t sample, int channel, double t) const;

  const SyntheticConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  // channels x latents, row-major.
  const std::vector<double>& mixing() const { return mixing_; }
  const std::vector<double>& frequencies() const { return freqs_; }
  // Number of point-process instants drawn for a sample before thinning.
  std::size_t grid_instants(std::size_t sample) const { return samples_.at(sample).grid_instants; }
  std::size_t sample_count() const { return samples_.size(); }
  const SampleLatents& latents(std::size_t sample) const { return samples_.at(sample); }

 private:
  SyntheticConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<double> freqs_;
  std::vector<double> private_freqs_;
  std::vector<double> mixing_;
  std::vector<SampleLatents> samples_;
};

struct SyntheticData {
  ImtsDataset dataset;
  SyntheticOracle oracle;

  // Unobserved fraction over all thinned (instant, channel) cells, history and horizon.
  double grid_missing_ratio() const;
};

SyntheticData generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace vimts::core
