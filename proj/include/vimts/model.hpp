#pragma once

// Full forecaster: patchify -> channel graph compensation -> backbone
// reconstruction -> point head, with shared parameters in one ParameterSet.

#include "vimts/autodiff.hpp"
#include "vimts/backbone.hpp"
#include "vimts/channel_graph.hpp"
#include "vimts/core/dataset.hpp"
#include "vimts/geometry.hpp"
#include "vimts/patch2point.hpp"
#include "vimts/patchify.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace vimts {

struct ModelConfig {
  int channels = 3;
  int time_dim = 8;
  int feature_dim = 8;
  int graph_embed_dim = 8;
  int hops = 2;
  bool use_graph = true;
  double section_size = 1.0 / 12.0;
  std::string variant = "desk";  // desk | base
  int enc_dim = 64;
  int dec_dim = 32;
  int enc_depth = 2;
  int dec_depth = 1;
  int enc_heads = 4;
  int dec_heads = 4;
  bool learnable_tpe = false;
  backbone::BackboneKind backbone_kind = backbone::BackboneKind::Mae;
  int head_hidden = 0;  // 0: decoder width
  int proj_bins = 4;
  std::uint64_t init_seed = 0;

  static ModelConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

struct Query {
  int channel = 0;
  double time = 0.0;
  double target = core::kUnobserved;
};

// Queries with their section resolved, ready for one forward pass.
struct ResolvedQuery {
  int channel = 0;
  double time = 0.0;
  int section = 0;
  double target = core::kUnobserved;
};

struct ModelInput {
  std::vector<std::vector<core::Observation>> history;  // per channel, inside the history window
  std::vector<backbone::SequencePlan> plans;
  std::vector<ResolvedQuery> queries;
};

class VimtsModel {
 public:
  VimtsModel() = default;
  VimtsModel(const ModelConfig& config, double obs_span, double horizon_span);

  const ModelConfig& config() const { return config_; }
  const SectionGeometry& geometry() const { return geometry_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  const patchify::Patchify& patchify() const { return patchify_; }
  const graph::ChannelGraph& graph() const { return graph_; }
  const backbone::Backbone& backbone() const { return backbone_; }
  const p2p::QueryHead& head() const { return head_; }
  const p2p::ProjectionHead& projection_head() const { return proj_head_; }

  // Q x 1 predictions aligned with input.queries.
  ad::Var forward(ad::Tape& tape, const ModelInput& input, p2p::HeadMode mode) const;

  // Visible 1..P, targets P+1..P+N_rec for every channel. Queries must fall in
  // the forecast sections; anything earlier throws std::out_of_range.
  ModelInput forecast_input(const std::vector<std::vector<core::Observation>>& history,
                            const std::vector<Query>& queries) const;

  // Predictions aligned with `queries`.
  std::vector<double> predict(const std::vector<std::vector<core::Observation>>& history,
                              const std::vector<Query>& queries,
                              p2p::HeadMode mode = p2p::HeadMode::Patch2Point) const;

 private:
  ModelConfig config_;
  SectionGeometry geometry_;
  ad::ParameterSet params_;
  patchify::Patchify patchify_;
  graph::ChannelGraph graph_;
  backbone::Backbone backbone_;
  p2p::QueryHead head_;
  p2p::ProjectionHead proj_head_;
};

}  // namespace vimts
