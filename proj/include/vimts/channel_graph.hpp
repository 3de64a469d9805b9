#pragma once

// Per-section channel graph: hybrid static/dynamic node embeddings, a learned
// row-stochastic adjacency, multi-hop GCN with a skip connection, and the
// compensation concat [H | H_gcn].
//
// All functions take a section-major stack of P blocks of N rows and treat
// each block independently.

#include "vimts/autodiff.hpp"

#include <random>
#include <string>
#include <utility>

namespace vimts::graph {

using ad::Tape;
using ad::Var;

struct GraphConfig {
  int channels = 3;     // N
  int patch_dim = 9;    // D
  int embed_dim = 8;    // D_ve
  int hops = 2;         // M
  bool enabled = true;  // false: compensation duplicates H

  void validate() const;
};

class ChannelGraph {
 public:
  ChannelGraph() = default;
  ChannelGraph(ad::ParameterSet& params, const GraphConfig& config, std::mt19937_64& rng,
               const std::string& prefix = "graph");

  const GraphConfig& config() const { return config_; }

  // E_{p,k} for k = 1, 2, each (P*N) x D_ve.
  std::pair<Var, Var> hybrid_embeddings(Tape& tape, Var h, int sections) const;
  // Stacked N x N row-stochastic blocks, (P*N) x N.
  Var adjacency(Var e1, Var e2, int sections) const;
  // ReLU(sum_m A^m H W_m) + H.
  Var gcn_propagate(Tape& tape, Var h, Var a, int sections) const;
  // [H | H_gcn], (P*N) x 2D. With the graph disabled, [H | H].
  Var compensate(Tape& tape, Var h, int sections) const;

  ad::ParamId static_dict(int k) const { return k == 1 ? static1_ : static2_; }
  ad::ParamId dynamic_proj(int k) const { return k == 1 ? dynamic1_ : dynamic2_; }
  ad::ParamId gate_proj(int k) const { return k == 1 ? gate1_ : gate2_; }
  ad::ParamId gcn_weight(int m) const { return gcn_.at(static_cast<std::size_t>(m)); }

 private:
  Var hybrid(Tape& tape, Var h, int sections, ad::ParamId stat, ad::ParamId dyn, ad::ParamId gate) const;

  GraphConfig config_;
  ad::ParamId static1_ = -1;
  ad::ParamId static2_ = -1;
  ad::ParamId dynamic1_ = -1;
  ad::ParamId dynamic2_ = -1;
  ad::ParamId gate1_ = -1;
  ad::ParamId gate2_ = -1;
  std::vector<ad::ParamId> gcn_;
};

}  // namespace vimts::graph
