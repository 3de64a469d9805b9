#include "vimts/patch2point.hpp"

#include "vimts/errors.hpp"
#include "vimts/geometry.hpp"
#include "vimts/init.hpp"
#include "vimts/ops.hpp"

#include <algorithm>
#include <cmath>

namespace vimts::p2p {

HeadMode parse_head_mode(const std::string& name) {
  if (name == "patch2point") return HeadMode::Patch2Point;
  if (name == "direct_projection") return HeadMode::DirectProjection;
  throw ConfigError("unknown head mode '" + name + "' (expected patch2point or direct_projection)");
}

std::string head_mode_name(HeadMode mode) {
  return mode == HeadMode::Patch2Point ? "patch2point" : "direct_projection";
}

int match_patch_index(double t_q, double t_start, double size, int total_sections) {
  return section_index(t_q, t_start, size, total_sections);
}

QueryHead::QueryHead(ad::ParameterSet& params, int time_dim, int repr_dim, int hidden, std::mt19937_64& rng,
                     const std::string& prefix)
    : hidden_(hidden) {
  if (hidden < 1) throw ConfigError("query head: hidden width must be positive");
  w1_ = params.add(prefix + ".fc1.weight", init::xavier_uniform(time_dim + repr_dim, hidden, rng));
  b1_ = params.add(prefix + ".fc1.bias", ad::Matrix::Zero(1, hidden));
  w2_ = params.add(prefix + ".fc2.weight", init::xavier_uniform(hidden, 1, rng));
  b2_ = params.add(prefix + ".fc2.bias", ad::Matrix::Zero(1, 1));
}

Var QueryHead::forward(Tape& tape, Var time_embed, Var repr) const {
  const Var h = ad::relu(ad::linear(ad::concat_cols({time_embed, repr}), tape.parameter(w1_), tape.parameter(b1_)));
  return ad::linear(h, tape.parameter(w2_), tape.parameter(b2_));
}

double predict_point(double t_q, std::span<const double> repr, const patchify::TimeEmbedParams& time_params,
                     const ad::ParameterSet& params, const QueryHead& head) {
  ad::Tape tape(&params);
  const auto phi = patchify::time_embed(t_q, time_params);
  ad::Matrix te = Eigen::Map<const ad::Matrix>(phi.data(), 1, static_cast<Eigen::Index>(phi.size()));
  ad::Matrix z = Eigen::Map<const ad::Matrix>(repr.data(), 1, static_cast<Eigen::Index>(repr.size()));
  return head.forward(tape, tape.constant(te), tape.constant(z)).scalar();
}

ProjectionHead::ProjectionHead(ad::ParameterSet& params, int repr_dim, int bins, std::mt19937_64& rng,
                               const std::string& prefix)
    : bins_(bins) {
  if (bins < 1) throw ConfigError("projection head: bins must be positive");
  w_ = params.add(prefix + ".weight", init::xavier_uniform(repr_dim, bins, rng));
  b_ = params.add(prefix + ".bias", ad::Matrix::Zero(1, bins));
}

int ProjectionHead::bin_of(double t_q, double section_start, double size) const {
  const int b = static_cast<int>(std::floor((t_q - section_start) / size * bins_));
  return std::clamp(b, 0, bins_ - 1);
}

Var ProjectionHead::forward(Tape& tape, Var repr, std::span<const int> rows, std::span<const int> bins) const {
  return ad::gather_elements(ad::linear(repr, tape.parameter(w_), tape.parameter(b_)), rows, bins);
}

}  // namespace vimts::p2p
