#include "vimts/channel_graph.hpp"

#include "vimts/errors.hpp"
#include "vimts/init.hpp"
#include "vimts/ops.hpp"

#include <stdexcept>

namespace vimts::graph {

void GraphConfig::validate() const {
  if (channels < 1 || patch_dim < 1 || embed_dim < 1) throw ConfigError("graph: dimensions must be positive");
  if (hops < 1) throw ConfigError("graph: hops must be >= 1");
}

ChannelGraph::ChannelGraph(ad::ParameterSet& params, const GraphConfig& config, std::mt19937_64& rng,
                           const std::string& prefix)
    : config_(config) {
  config_.validate();
  const int n = config_.channels;
  const int d = config_.patch_dim;
  const int dv = config_.embed_dim;
  static1_ = params.add(prefix + ".static1", init::normal(n, dv, 1.0, rng));
  static2_ = params.add(prefix + ".static2", init::normal(n, dv, 1.0, rng));
  dynamic1_ = params.add(prefix + ".dynamic1", init::xavier_uniform(d, dv, rng));
  dynamic2_ = params.add(prefix + ".dynamic2", init::xavier_uniform(d, dv, rng));
  gate1_ = params.add(prefix + ".gate1", init::xavier_uniform(d + dv, 1, rng));
  gate2_ = params.add(prefix + ".gate2", init::xavier_uniform(d + dv, 1, rng));
  for (int m = 0; m <= config_.hops; ++m) {
    gcn_.push_back(params.add(prefix + ".gcn." + std::to_string(m), init::xavier_uniform(d, d, rng)));
  }
}

Var ChannelGraph::hybrid(Tape& tape, Var h, int sections, ad::ParamId stat, ad::ParamId dyn, ad::ParamId gate) const {
  const int n = config_.channels;
  if (h.rows() != static_cast<Eigen::Index>(sections) * n || h.cols() != config_.patch_dim) {
    throw std::invalid_argument("graph: H must be (P*N) x D");
  }
  std::vector<int> channel_of(static_cast<std::size_t>(sections * n));
  for (std::size_t i = 0; i < channel_of.size(); ++i) channel_of[i] = static_cast<int>(i) % n;
  const Var es = ad::gather_rows(tape.parameter(stat), channel_of);
  const Var g = ad::relu(ad::tanh(ad::matmul(ad::concat_cols({h, es}), tape.parameter(gate))));
  return ad::add(es, ad::mul_col(ad::matmul(h, tape.parameter(dyn)), g));
}

std::pair<Var, Var> ChannelGraph::hybrid_embeddings(Tape& tape, Var h, int sections) const {
  return {hybrid(tape, h, sections, static1_, dynamic1_, gate1_), hybrid(tape, h, sections, static2_, dynamic2_, gate2_)};
}

Var ChannelGraph::adjacency(Var e1, Var e2, int sections) const {
  return ad::softmax_rows(ad::relu(ad::blocked_matmul(e1, e2, sections, true)));
}

Var ChannelGraph::gcn_propagate(Tape& tape, Var h, Var a, int sections) const {
  Var acc = ad::matmul(h, tape.parameter(gcn_[0]));
  Var hop = h;
  for (int m = 1; m <= config_.hops; ++m) {
    hop = ad::blocked_matmul(a, hop, sections, false);
    acc = ad::add(acc, ad::matmul(hop, tape.parameter(gcn_[static_cast<std::size_t>(m)])));
  }
  return ad::add(ad::relu(acc), h);
}

Var ChannelGraph::compensate(Tape& tape, Var h, int sections) const {
  if (!config_.enabled) return ad::concat_cols({h, h});
  const auto [e1, e2] = hybrid_embeddings(tape, h, sections);
  return ad::concat_cols({h, gcn_propagate(tape, h, adjacency(e1, e2, sections), sections)});
}

}  // namespace vimts::graph
