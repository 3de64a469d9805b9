#include "vimts/core/synthetic.hpp"

#include "vimts/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace vimts::core {
using nlohmann::json;

SyntheticConfig SyntheticConfig::from_json(const json& j) {
  SyntheticConfig c;
  c.channels = j.value("channels", c.channels);
  c.samples = j.value("samples", c.samples);
  c.latents = j.value("latents", c.latents);
  c.missing_ratio = j.value("missing_ratio", c.missing_ratio);
  c.obs_span = j.value("obs_span", c.obs_span);
  c.horizon_span = j.value("horizon_span", c.horizon_span);
  c.rate = j.value("rate", c.rate);
  c.noise = j.value("noise", c.noise);
  c.freq_min = j.value("freq_min", c.freq_min);
  c.freq_max = j.value("freq_max", c.freq_max);
  c.coupling = j.value("coupling", c.coupling);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.validate();
  return c;
}

json SyntheticConfig::to_json() const {
  return json{{"channels", channels},       {"samples", samples},   {"latents", latents},
              {"missing_ratio", missing_ratio}, {"obs_span", obs_span}, {"horizon_span", horizon_span},
              {"rate", rate},               {"noise", noise},       {"freq_min", freq_min},
              {"freq_max", freq_max},       {"coupling", coupling}, {"max_retries", max_retries}};
}

void SyntheticConfig::validate() const {
  if (channels < 1) throw ConfigError("synthetic: channels must be >= 1");
  if (samples < 1) throw ConfigError("synthetic: samples must be >= 1");
  if (latents < 1) throw ConfigError("synthetic: latents must be >= 1");
  if (!(missing_ratio >= 0.0 && missing_ratio < 1.0)) throw ConfigError("synthetic: missing_ratio must be in [0,1)");
  if (!(obs_span > 0.0) || horizon_span < 0.0 || obs_span + horizon_span > 1.0 + 1e-12) {
    throw ConfigError("synthetic: spans must be positive and sum to at most 1");
  }
  if (!(rate > 0.0) || noise < 0.0) throw ConfigError("synthetic: rate must be positive, noise non-negative");
  if (!(freq_min > 0.0) || freq_max < freq_min) throw ConfigError("synthetic: invalid frequency range");
  if (coupling < 0.0 || coupling > 1.0) throw ConfigError("synthetic: coupling must be in [0,1]");
}

SyntheticOracle::SyntheticOracle(SyntheticConfig config, std::uint64_t seed, std::vector<double> frequencies,
                                 std::vector<double> private_frequencies, std::vector<double> mixing,
                                 std::vector<SampleLatents> samples)
    : config_(std::move(config)),
      seed_(seed),
      freqs_(std::move(frequencies)),
      private_freqs_(std::move(private_frequencies)),
      mixing_(std::move(mixing)),
      samples_(std::move(samples)) {}

double SyntheticOracle::value(std::size_t sample, int channel, double t) const {
  const auto& s = samples_.at(sample);
  const int k_count = config_.latents;
  double shared = 0.0;
  for (int k = 0; k < k_count; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    shared += mixing_[static_cast<std::size_t>(channel * k_count + k)] * s.amplitude[ku] *
              std::sin(2.0 * std::numbers::pi * freqs_[ku] * t + s.phase[ku]);
  }
  double own = 0.0;
  if (config_.coupling < 1.0) {
    const auto pi = static_cast<std::size_t>(k_count + channel);
    own = s.amplitude[pi] *
          std::sin(2.0 * std::numbers::pi * private_freqs_[static_cast<std::size_t>(channel)] * t + s.phase[pi]);
  }
  return config_.coupling * shared + (1.0 - config_.coupling) * own;
}

double SyntheticData::grid_missing_ratio() const {
  std::size_t cells = 0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    cells += oracle.grid_instants(i) * static_cast<std::size_t>(dataset.channel_count);
    kept += dataset.samples[i].observation_count() + dataset.samples[i].query_count();
  }
  return cells == 0 ? 0.0 : 1.0 - static_cast<double>(kept) / static_cast<double>(cells);
}

SyntheticData generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n_ch = config.channels;
  const int n_lat = config.latents;

  std::vector<double> freqs(static_cast<std::size_t>(n_lat));
  for (auto& f : freqs) f = config.freq_min + (config.freq_max - config.freq_min) * unit(rng);
  std::vector<double> private_freqs(static_cast<std::size_t>(n_ch));
  for (auto& f : private_freqs) f = config.freq_min + (config.freq_max - config.freq_min) * unit(rng);

  // Unit diagonal on the leading block; other entries uniform.
  std::vector<double> mixing(static_cast<std::size_t>(n_ch * n_lat));
  for (int n = 0; n < n_ch; ++n) {
    for (int k = 0; k < n_lat; ++k) {
      double w = 0.0;
      if (n == k) {
        w = 1.0;
      } else if (n < n_lat) {
        w = unit(rng) - 0.5;
      } else {
        w = 2.0 * unit(rng) - 1.0;
      }
      mixing[static_cast<std::size_t>(n * n_lat + k)] = w;
    }
  }

  const double window = config.obs_span + config.horizon_span;
  const double keep = 1.0 - config.missing_ratio;
  std::poisson_distribution<int> count_dist(config.rate * window);
  std::normal_distribution<double> noise(0.0, 1.0);

  SyntheticData out;
  out.dataset.channel_count = n_ch;
  out.dataset.channel_names = default_channel_names(n_ch);
  out.dataset.meta.obs_span = config.obs_span;
  out.dataset.meta.horizon_span = config.horizon_span;
  out.dataset.meta.time_scale = 1.0;

  std::vector<SyntheticOracle::SampleLatents> latents;
  latents.reserve(static_cast<std::size_t>(config.samples));
  for (int i = 0; i < config.samples; ++i) {
    bool accepted = false;
    for (int attempt = 0; attempt <= config.max_retries && !accepted; ++attempt) {
      SyntheticOracle::SampleLatents lat;
      const auto terms = static_cast<std::size_t>(n_lat + n_ch);
      lat.amplitude.resize(terms);
      lat.phase.resize(terms);
      for (std::size_t k = 0; k < terms; ++k) {
        lat.amplitude[k] = 0.5 + unit(rng);
        lat.phase[k] = 2.0 * std::numbers::pi * unit(rng);
      }
      const int count = count_dist(rng);
      std::vector<double> times(static_cast<std::size_t>(count));
      for (auto& t : times) t = window * unit(rng);
      std::sort(times.begin(), times.end());
      times.erase(std::unique(times.begin(), times.end()), times.end());
      lat.grid_instants = times.size();

      SyntheticOracle one(config, seed, freqs, private_freqs, mixing, {lat});
      std::vector<Record> obs;
      std::vector<Record> queries;
      for (double t : times) {
        for (int n = 0; n < n_ch; ++n) {
          if (unit(rng) >= keep) continue;
          const double clean = one.value(0, n, t);
          if (t < config.obs_span) {
            obs.push_back(Record{n, t, clean + config.noise * noise(rng)});
          } else {
            queries.push_back(Record{n, t, clean});
          }
        }
      }
      if (obs.empty()) continue;
      char id[32];
      std::snprintf(id, sizeof id, "s%05d", i);
      out.dataset.samples.push_back(ImtsSample::from_records(id, n_ch, std::move(obs), std::move(queries)));
      latents.push_back(std::move(lat));
      accepted = true;
    }
    if (!accepted) {
      throw ConfigError("synthetic: sample " + std::to_string(i) + " had no observations after " +
                        std::to_string(config.max_retries) + " retries; lower missing_ratio or raise rate");
    }
  }
  out.oracle = SyntheticOracle(config, seed, std::move(freqs), std::move(private_freqs), std::move(mixing),
                               std::move(latents));
  return out;
}

}  // namespace vimts::core
