#pragma once

// Masked-autoencoder backbone over per-channel section sequences.
//
// Tokens arrive section-major ((P*N) x 2D, row (p-1)*N + n) and every channel
// becomes its own sequence with shared weights. The encoder only ever sees
// visible sections; the decoder appends one shared mask token per target
// section and returns representations at the targets only.

#include "vimts/autodiff.hpp"

#include <json.hpp>

#include <random>
#include <span>
#include <string>
#include <vector>

namespace vimts::backbone {

using ad::Matrix;
using ad::Tape;
using ad::Var;

enum class BackboneKind { Mae, Plain };

struct BackboneConfig {
  int input_dim = 18;  // 2D after compensation
  int enc_dim = 64;
  int dec_dim = 32;
  int enc_depth = 2;
  int dec_depth = 1;
  int enc_heads = 4;
  int dec_heads = 4;
  int mlp_ratio = 4;
  int max_sections = 64;
  bool learnable_tpe = false;
  BackboneKind kind = BackboneKind::Mae;
  double ln_eps = 1e-6;

  void validate() const;
  // MAE-base widths (768/512, depths 12/8, heads 12/16).
  static BackboneConfig base(int input_dim, int max_sections);
};

BackboneKind parse_kind(const std::string& name);
std::string kind_name(BackboneKind kind);

// Sine-cosine period embedding of 1-based section index p for a width `dim`
// divisible by 4: [h(p) | w(1)], each half interleaving sin/cos.
std::vector<double> tpe(int p, int dim);
// Rows p = 1..sections of tpe(p, dim).
Matrix tpe_table(int sections, int dim);

// One channel's role assignment. Indices are 1-based section numbers; every
// visible index must be embedded, targets may lie beyond the embedded range.
struct SequencePlan {
  int channel = 0;
  std::vector<int> visible;
  std::vector<int> targets;
};

struct Encoded {
  Var latents;               // sum(|V|) x D_e, plan order
  std::vector<int> lengths;  // |V| per plan
};

// Pre-norm transformer block parameter ids.
struct BlockParams {
  ad::ParamId norm1_w, norm1_b, qkv_w, qkv_b, proj_w, proj_b;
  ad::ParamId norm2_w, norm2_b, fc1_w, fc1_b, fc2_w, fc2_b;
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(ad::ParameterSet& params, const BackboneConfig& config, std::mt19937_64& rng,
           const std::string& prefix = "backbone");

  const BackboneConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }

  // e = H_in W_enc + b plus the encoder TPE of each row's section.
  Var embed_inputs(Tape& tape, Var h_in, int channels) const;

  Encoded encode(Tape& tape, Var tokens, int channels, std::span<const SequencePlan> plans) const;
  // sum(|T|) x D_d in plan order, each plan's targets in listed order.
  Var decode_reconstruct(Tape& tape, const Encoded& encoded, std::span<const SequencePlan> plans) const;

  // Encode + decode for the masked autoencoder; for the plain substitute, one
  // encoder pass over V and T with zero tokens at T, projected to D_d.
  Var reconstruct(Tape& tape, Var tokens, int channels, std::span<const SequencePlan> plans) const;

  Var encoder_tpe(Tape& tape) const;
  Var decoder_tpe(Tape& tape) const;

 private:
  BlockParams make_block(ad::ParameterSet& params, const std::string& name, int width, std::mt19937_64& rng);
  Var block(Tape& tape, const BlockParams& b, Var x, std::span<const int> lengths, int heads) const;
  void check_index(int p) const;

  BackboneConfig config_;
  std::string prefix_;
  ad::ParamId in_w_ = -1, in_b_ = -1;
  std::vector<BlockParams> encoder_;
  ad::ParamId enc_norm_w_ = -1, enc_norm_b_ = -1;
  ad::ParamId dec_w_ = -1, dec_b_ = -1;
  ad::ParamId mask_token_ = -1;
  std::vector<BlockParams> decoder_;
  ad::ParamId dec_norm_w_ = -1, dec_norm_b_ = -1;
  ad::ParamId enc_tpe_ = -1, dec_tpe_ = -1;
  Matrix enc_tpe_fixed_;
  Matrix dec_tpe_fixed_;
};

}  // namespace vimts::backbone
