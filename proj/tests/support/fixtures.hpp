#pragma once

#include "vimts/core/forecast_task.hpp"
#include "vimts/core/synthetic.hpp"
#include "vimts/model.hpp"

namespace vimts::testing {

// N=2, P=3, one forecast section, D_e=8.
inline ModelConfig minimal_model_config(std::uint64_t seed = 0) {
  ModelConfig c;
  c.channels = 2;
  c.time_dim = 3;
  c.feature_dim = 3;
  c.graph_embed_dim = 2;
  c.hops = 2;
  c.section_size = 0.25;
  c.enc_dim = 8;
  c.dec_dim = 8;
  c.enc_depth = 1;
  c.dec_depth = 1;
  c.enc_heads = 2;
  c.dec_heads = 2;
  c.head_hidden = 4;
  c.init_seed = seed;
  return c;
}

inline ModelConfig desk_model_config(int channels, std::uint64_t seed = 0) {
  ModelConfig c;
  c.channels = channels;
  c.init_seed = seed;
  return c;
}

inline std::vector<core::ForecastTask> synthetic_tasks(int samples, std::uint64_t seed, int channels = 3,
                                                       double missing = 0.7) {
  core::SyntheticConfig sc;
  sc.channels = channels;
  sc.samples = samples;
  sc.missing_ratio = missing;
  return core::build_forecast_tasks(core::generate_synthetic(sc, seed).dataset);
}

}  // namespace vimts::testing
