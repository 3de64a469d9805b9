#include "vimts/model.hpp"

#include "vimts/errors.hpp"
#include "vimts/ops.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <stdexcept>

namespace vimts {
using nlohmann::json;

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.channels = j.value("channels", c.channels);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.graph_embed_dim = j.value("graph_embed_dim", c.graph_embed_dim);
  c.hops = j.value("hops", c.hops);
  c.use_graph = j.value("use_graph", c.use_graph);
  c.section_size = j.value("section_size", c.section_size);
  c.variant = j.value("variant", c.variant);
  if (c.variant == "base") {
    c.enc_dim = 768;
    c.dec_dim = 512;
    c.enc_depth = 12;
    c.dec_depth = 8;
    c.enc_heads = 12;
    c.dec_heads = 16;
  } else if (c.variant != "desk") {
    throw ConfigError("model: variant must be desk or base");
  }
  c.enc_dim = j.value("enc_dim", c.enc_dim);
  c.dec_dim = j.value("dec_dim", c.dec_dim);
  c.enc_depth = j.value("enc_depth", c.enc_depth);
  c.dec_depth = j.value("dec_depth", c.dec_depth);
  c.enc_heads = j.value("enc_heads", c.enc_heads);
  c.dec_heads = j.value("dec_heads", c.dec_heads);
  c.learnable_tpe = j.value("learnable_tpe", c.learnable_tpe);
  c.backbone_kind = backbone::parse_kind(j.value("backbone_kind", backbone::kind_name(c.backbone_kind)));
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.proj_bins = j.value("proj_bins", c.proj_bins);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.validate();
  return c;
}

json ModelConfig::to_json() const {
  return json{{"channels", channels},
              {"time_dim", time_dim},
              {"feature_dim", feature_dim},
              {"graph_embed_dim", graph_embed_dim},
              {"hops", hops},
              {"use_graph", use_graph},
              {"section_size", section_size},
              {"variant", variant},
              {"enc_dim", enc_dim},
              {"dec_dim", dec_dim},
              {"enc_depth", enc_depth},
              {"dec_depth", dec_depth},
              {"enc_heads", enc_heads},
              {"dec_heads", dec_heads},
              {"learnable_tpe", learnable_tpe},
              {"backbone_kind", backbone::kind_name(backbone_kind)},
              {"head_hidden", head_hidden},
              {"proj_bins", proj_bins},
              {"init_seed", init_seed}};
}

void ModelConfig::validate() const {
  if (channels < 1) throw ConfigError("model: channels must be >= 1");
  if (!(section_size > 0.0)) throw ConfigError("model: section_size must be positive");
  if (head_hidden < 0) throw ConfigError("model: head_hidden must be >= 0");
}

VimtsModel::VimtsModel(const ModelConfig& config, double obs_span, double horizon_span) : config_(config) {
  config_.validate();
  geometry_ = SectionGeometry::from_spans(obs_span, horizon_span, config_.section_size);
  if (geometry_.future < 1) throw ConfigError("model: the horizon must cover at least one section");
  std::mt19937_64 rng(config_.init_seed);
  patchify_ = patchify::Patchify(params_, {config_.channels, config_.time_dim, config_.feature_dim}, rng);
  const int d = patchify_.config().patch_dim();
  graph_ = graph::ChannelGraph(params_, {config_.channels, d, config_.graph_embed_dim, config_.hops, config_.use_graph},
                               rng);
  backbone::BackboneConfig bc;
  bc.input_dim = 2 * d;
  bc.enc_dim = config_.enc_dim;
  bc.dec_dim = config_.dec_dim;
  bc.enc_depth = config_.enc_depth;
  bc.dec_depth = config_.dec_depth;
  bc.enc_heads = config_.enc_heads;
  bc.dec_heads = config_.dec_heads;
  bc.max_sections = geometry_.total();
  bc.learnable_tpe = config_.learnable_tpe;
  bc.kind = config_.backbone_kind;
  backbone_ = backbone::Backbone(params_, bc, rng);
  const int hidden = config_.head_hidden > 0 ? config_.head_hidden : config_.dec_dim;
  head_ = p2p::QueryHead(params_, config_.time_dim, config_.dec_dim, hidden, rng);
  proj_head_ = p2p::ProjectionHead(params_, config_.dec_dim, config_.proj_bins, rng);
}

ad::Var VimtsModel::forward(ad::Tape& tape, const ModelInput& input, p2p::HeadMode mode) const {
  const int n = config_.channels;
  const int sections = geometry_.history;
  if (static_cast<int>(input.history.size()) != n) throw std::invalid_argument("model: history channel count mismatch");
  const auto grid = patchify_.assemble(tape, patchify::divide_sections(input.history, geometry_, sections), sections);
  const ad::Var h_in = graph_.compensate(tape, grid.features, sections);
  const ad::Var tokens = backbone_.embed_inputs(tape, h_in, n);
  const ad::Var z = backbone_.reconstruct(tape, tokens, n, input.plans);

  // Row of z for each (channel, target section).
  std::map<std::pair<int, int>, int> row_of;
  int row = 0;
  for (const auto& plan : input.plans) {
    for (int t : plan.targets) row_of[{plan.channel, t}] = row++;
  }
  std::vector<int> rows;
  rows.reserve(input.queries.size());
  for (const auto& q : input.queries) {
    const auto it = row_of.find({q.channel, q.section});
    if (it == row_of.end()) {
      throw std::invalid_argument("model: query section " + std::to_string(q.section) + " of channel " +
                                  std::to_string(q.channel) + " is not reconstructed");
    }
    rows.push_back(it->second);
  }
  if (mode == p2p::HeadMode::DirectProjection) {
    std::vector<int> bins;
    for (const auto& q : input.queries) {
      bins.push_back(proj_head_.bin_of(q.time, geometry_.section_start(q.section), geometry_.size));
    }
    return proj_head_.forward(tape, z, rows, bins);
  }
  std::vector<double> times;
  for (const auto& q : input.queries) times.push_back(q.time);
  return head_.forward(tape, patchify_.time_embed(tape, times), ad::gather_rows(z, rows));
}

ModelInput VimtsModel::forecast_input(const std::vector<std::vector<core::Observation>>& history,
                                      const std::vector<Query>& queries) const {
  const int n = config_.channels;
  if (static_cast<int>(history.size()) != n) throw std::invalid_argument("model: history channel count mismatch");
  bool any = false;
  for (const auto& h : history) {
    for (const auto& o : h) {
      if (o.time < geometry_.t_start) throw std::out_of_range("model: observation before the window start");
      if (o.time > geometry_.history_end()) {
        throw std::out_of_range("model: observation beyond the history window");
      }
    }
    any = any || !h.empty();
  }
  if (!any) throw std::invalid_argument("model: empty history for all channels");

  ModelInput in;
  in.history = history;
  for (int c = 0; c < n; ++c) {
    backbone::SequencePlan plan{c, {}, {}};
    for (int p = 1; p <= geometry_.history; ++p) plan.visible.push_back(p);
    for (int p = geometry_.history + 1; p <= geometry_.total(); ++p) plan.targets.push_back(p);
    in.plans.push_back(std::move(plan));
  }
  for (const auto& q : queries) {
    if (q.channel < 0 || q.channel >= n) throw std::out_of_range("model: query channel out of range");
    if (q.time < geometry_.t_start) throw std::out_of_range("model: query before the observation start");
    int section = p2p::match_patch_index(q.time, geometry_.t_start, geometry_.size, geometry_.total());
    // A horizon query inside the overlap of section P reads the first forecast section.
    if (q.time >= geometry_.obs_end) section = std::max(section, geometry_.history + 1);
    if (section <= geometry_.history) {
      throw std::out_of_range("model: query at t=" + std::to_string(q.time) + " lies inside the history window");
    }
    in.queries.push_back(ResolvedQuery{q.channel, q.time, section, q.target});
  }
  return in;
}

std::vector<double> VimtsModel::predict(const std::vector<std::vector<core::Observation>>& history,
                                        const std::vector<Query>& queries, p2p::HeadMode mode) const {
  if (queries.empty()) return {};
  ad::Tape tape(&params_);
  const ad::Matrix& v = forward(tape, forecast_input(history, queries), mode).value();
  return {v.data(), v.data() + v.size()};
}

}  // namespace vimts
