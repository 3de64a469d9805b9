#pragma once

// Coarse-to-fine point prediction from reconstructed section representations.

#include "vimts/autodiff.hpp"
#include "vimts/patchify.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace vimts::p2p {

using ad::Tape;
using ad::Var;

enum class HeadMode { Patch2Point, DirectProjection };
HeadMode parse_head_mode(const std::string& name);
std::string head_mode_name(HeadMode mode);

// Section holding t_q: start(i) <= t_q < start(i) + s, last edge -> P_total.
int match_patch_index(double t_q, double t_start, double size, int total_sections);

// Two-layer perceptron on [φ(t_q) | ẑ] with ReLU after the first layer.
class QueryHead {
 public:
  QueryHead() = default;
  QueryHead(ad::ParameterSet& params, int time_dim, int repr_dim, int hidden, std::mt19937_64& rng,
            const std::string& prefix = "head");

  // time_embed: n x D_te, repr: n x D_d -> n x 1.
  Var forward(Tape& tape, Var time_embed, Var repr) const;

  int hidden() const { return hidden_; }

 private:
  ad::ParamId w1_ = -1, b1_ = -1, w2_ = -1, b2_ = -1;
  int hidden_ = 0;
};

// Value-level x̂_q = head([φ(t_q) | ẑ]).
double predict_point(double t_q, std::span<const double> repr, const patchify::TimeEmbedParams& time_params,
                     const ad::ParameterSet& params, const QueryHead& head);

// Ablation head: a linear map from ẑ to `bins` equal sub-intervals of the
// section; a query reads the bin that contains it.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(ad::ParameterSet& params, int repr_dim, int bins, std::mt19937_64& rng,
                 const std::string& prefix = "proj_head");

  int bins() const { return bins_; }
  int bin_of(double t_q, double section_start, double size) const;
  // repr: r x D_d; returns n x 1 with out[i] = (repr W + b)(rows[i], bins[i]).
  Var forward(Tape& tape, Var repr, std::span<const int> rows, std::span<const int> bins) const;

 private:
  ad::ParamId w_ = -1, b_ = -1;
  int bins_ = 0;
};

}  // namespace vimts::p2p
