#include "vimts/backbone.hpp"

#include "vimts/errors.hpp"
#include "vimts/init.hpp"
#include "vimts/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace vimts::backbone {

void BackboneConfig::validate() const {
  if (input_dim < 1) throw ConfigError("backbone: input_dim must be positive");
  if (enc_dim % 4 != 0 || dec_dim % 4 != 0) throw ConfigError("backbone: widths must be divisible by 4");
  if (enc_heads < 1 || dec_heads < 1 || enc_dim % enc_heads != 0 || dec_dim % dec_heads != 0) {
    throw ConfigError("backbone: widths must be divisible by head counts");
  }
  if (enc_depth < 1 || (kind == BackboneKind::Mae && dec_depth < 1)) throw ConfigError("backbone: depths must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("backbone: mlp_ratio must be >= 1");
  if (max_sections < 1) throw ConfigError("backbone: max_sections must be >= 1");
}

BackboneConfig BackboneConfig::base(int input_dim, int max_sections) {
  BackboneConfig c;
  c.input_dim = input_dim;
  c.enc_dim = 768;
  c.dec_dim = 512;
  c.enc_depth = 12;
  c.dec_depth = 8;
  c.enc_heads = 12;
  c.dec_heads = 16;
  c.max_sections = max_sections;
  return c;
}

BackboneKind parse_kind(const std::string& name) {
  if (name == "mae") return BackboneKind::Mae;
  if (name == "plain") return BackboneKind::Plain;
  throw ConfigError("backbone: unknown kind '" + name + "' (expected mae or plain)");
}

std::string kind_name(BackboneKind kind) { return kind == BackboneKind::Mae ? "mae" : "plain"; }

namespace {

void sincos_half(double pos, int d, std::vector<double>& out) {
  for (int k = 0; k < d / 2; ++k) {
    const double angle = pos / std::pow(10000.0, 2.0 * k / static_cast<double>(d));
    out.push_back(std::sin(angle));
    out.push_back(std::cos(angle));
  }
}

}  // namespace

std::vector<double> tpe(int p, int dim) {
  if (dim % 4 != 0 || dim <= 0) throw ConfigError("tpe: dim must be a positive multiple of 4");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(dim));
  sincos_half(static_cast<double>(p), dim / 2, out);
  sincos_half(1.0, dim / 2, out);
  return out;
}

Matrix tpe_table(int sections, int dim) {
  Matrix m(sections, dim);
  for (int p = 1; p <= sections; ++p) {
    const auto row = tpe(p, dim);
    for (int j = 0; j < dim; ++j) m(p - 1, j) = row[static_cast<std::size_t>(j)];
  }
  return m;
}

BlockParams Backbone::make_block(ad::ParameterSet& params, const std::string& name, int width, std::mt19937_64& rng) {
  const int hidden = width * config_.mlp_ratio;
  BlockParams b{};
  b.norm1_w = params.add(name + ".norm1.weight", Matrix::Ones(1, width));
  b.norm1_b = params.add(name + ".norm1.bias", Matrix::Zero(1, width));
  b.qkv_w = params.add(name + ".attn.qkv.weight", init::xavier_uniform(width, 3 * width, rng));
  b.qkv_b = params.add(name + ".attn.qkv.bias", Matrix::Zero(1, 3 * width));
  b.proj_w = params.add(name + ".attn.proj.weight", init::xavier_uniform(width, width, rng));
  b.proj_b = params.add(name + ".attn.proj.bias", Matrix::Zero(1, width));
  b.norm2_w = params.add(name + ".norm2.weight", Matrix::Ones(1, width));
  b.norm2_b = params.add(name + ".norm2.bias", Matrix::Zero(1, width));
  b.fc1_w = params.add(name + ".mlp.fc1.weight", init::xavier_uniform(width, hidden, rng));
  b.fc1_b = params.add(name + ".mlp.fc1.bias", Matrix::Zero(1, hidden));
  b.fc2_w = params.add(name + ".mlp.fc2.weight", init::xavier_uniform(hidden, width, rng));
  b.fc2_b = params.add(name + ".mlp.fc2.bias", Matrix::Zero(1, width));
  return b;
}

Backbone::Backbone(ad::ParameterSet& params, const BackboneConfig& config, std::mt19937_64& rng,
                   const std::string& prefix)
    : config_(config), prefix_(prefix) {
  config_.validate();
  const int de = config_.enc_dim;
  const int dd = config_.dec_dim;
  in_w_ = params.add(prefix + ".input_proj.weight", init::xavier_uniform(config_.input_dim, de, rng));
  in_b_ = params.add(prefix + ".input_proj.bias", Matrix::Zero(1, de));
  for (int i = 0; i < config_.enc_depth; ++i) {
    encoder_.push_back(make_block(params, prefix + ".encoder." + std::to_string(i), de, rng));
  }
  enc_norm_w_ = params.add(prefix + ".encoder_norm.weight", Matrix::Ones(1, de));
  enc_norm_b_ = params.add(prefix + ".encoder_norm.bias", Matrix::Zero(1, de));
  dec_w_ = params.add(prefix + ".dec_proj.weight", init::xavier_uniform(de, dd, rng));
  dec_b_ = params.add(prefix + ".dec_proj.bias", Matrix::Zero(1, dd));
  if (config_.kind == BackboneKind::Mae) {
    mask_token_ = params.add(prefix + ".mask_token", init::normal(1, dd, 0.02, rng));
    for (int i = 0; i < config_.dec_depth; ++i) {
      decoder_.push_back(make_block(params, prefix + ".decoder." + std::to_string(i), dd, rng));
    }
    dec_norm_w_ = params.add(prefix + ".decoder_norm.weight", Matrix::Ones(1, dd));
    dec_norm_b_ = params.add(prefix + ".decoder_norm.bias", Matrix::Zero(1, dd));
  }
  enc_tpe_fixed_ = tpe_table(config_.max_sections, de);
  dec_tpe_fixed_ = tpe_table(config_.max_sections, dd);
  if (config_.learnable_tpe) {
    enc_tpe_ = params.add(prefix + ".enc_tpe", enc_tpe_fixed_);
    if (config_.kind == BackboneKind::Mae) dec_tpe_ = params.add(prefix + ".dec_tpe", dec_tpe_fixed_);
  }
}

Var Backbone::encoder_tpe(Tape& tape) const {
  return enc_tpe_ >= 0 ? tape.parameter(enc_tpe_) : tape.constant(enc_tpe_fixed_);
}

Var Backbone::decoder_tpe(Tape& tape) const {
  return dec_tpe_ >= 0 ? tape.parameter(dec_tpe_) : tape.constant(dec_tpe_fixed_);
}

void Backbone::check_index(int p) const {
  if (p < 1 || p > config_.max_sections) {
    throw ConfigError("backbone: section index " + std::to_string(p) + " outside 1.." +
                      std::to_string(config_.max_sections));
  }
}

Var Backbone::block(Tape& tape, const BlockParams& b, Var x, std::span<const int> lengths, int heads) const {
  auto P = [&](ad::ParamId id) { return tape.parameter(id); };
  const Var n1 = ad::layer_norm(x, P(b.norm1_w), P(b.norm1_b), config_.ln_eps);
  const Var attn = ad::segment_attention(ad::linear(n1, P(b.qkv_w), P(b.qkv_b)), lengths, heads);
  x = ad::add(x, ad::linear(attn, P(b.proj_w), P(b.proj_b)));
  const Var n2 = ad::layer_norm(x, P(b.norm2_w), P(b.norm2_b), config_.ln_eps);
  const Var mlp = ad::linear(ad::gelu(ad::linear(n2, P(b.fc1_w), P(b.fc1_b))), P(b.fc2_w), P(b.fc2_b));
  return ad::add(x, mlp);
}

Var Backbone::embed_inputs(Tape& tape, Var h_in, int channels) const {
  if (h_in.cols() != config_.input_dim) throw std::invalid_argument("backbone: input width mismatch");
  if (channels < 1 || h_in.rows() % channels != 0) throw std::invalid_argument("backbone: rows not a multiple of N");
  const int sections = static_cast<int>(h_in.rows()) / channels;
  check_index(sections);
  std::vector<int> section_of(static_cast<std::size_t>(h_in.rows()));
  for (std::size_t i = 0; i < section_of.size(); ++i) section_of[i] = static_cast<int>(i) / channels;
  const Var e = ad::linear(h_in, tape.parameter(in_w_), tape.parameter(in_b_));
  return ad::add(e, ad::gather_rows(encoder_tpe(tape), section_of));
}

Encoded Backbone::encode(Tape& tape, Var tokens, int channels, std::span<const SequencePlan> plans) const {
  const int sections = static_cast<int>(tokens.rows()) / channels;
  std::vector<int> rows;
  Encoded out;
  for (const auto& plan : plans) {
    if (plan.visible.empty()) throw std::invalid_argument("backbone: at least one visible section is required");
    if (plan.channel < 0 || plan.channel >= channels) throw std::invalid_argument("backbone: channel out of range");
    for (int p : plan.visible) {
      if (p < 1 || p > sections) throw std::invalid_argument("backbone: visible index outside embedded sections");
      rows.push_back((p - 1) * channels + plan.channel);
    }
    out.lengths.push_back(static_cast<int>(plan.visible.size()));
  }
  Var x = ad::gather_rows(tokens, rows);
  for (const auto& b : encoder_) x = block(tape, b, x, out.lengths, config_.enc_heads);
  out.latents = ad::layer_norm(x, tape.parameter(enc_norm_w_), tape.parameter(enc_norm_b_), config_.ln_eps);
  return out;
}

Var Backbone::decode_reconstruct(Tape& tape, const Encoded& encoded, std::span<const SequencePlan> plans) const {
  if (config_.kind != BackboneKind::Mae) throw std::logic_error("backbone: plain kind has no decoder");
  const Var projected = ad::linear(encoded.latents, tape.parameter(dec_w_), tape.parameter(dec_b_));
  const int visible_rows = static_cast<int>(projected.rows());
  // Source rows: [projected latents ; one mask-token row]; each sequence is
  // its visible latents followed by one mask token per target.
  const Var source = ad::concat_rows({projected, tape.parameter(mask_token_)});
  std::vector<int> gather;
  std::vector<int> positions;
  std::vector<int> lengths;
  std::vector<int> target_rows;
  int latent_off = 0;
  int seq_off = 0;
  for (std::size_t k = 0; k < plans.size(); ++k) {
    const auto& plan = plans[k];
    if (plan.targets.empty()) throw std::invalid_argument("backbone: at least one target section is required");
    for (std::size_t i = 0; i < plan.visible.size(); ++i) {
      check_index(plan.visible[i]);
      gather.push_back(latent_off + static_cast<int>(i));
      positions.push_back(plan.visible[i] - 1);
    }
    for (std::size_t i = 0; i < plan.targets.size(); ++i) {
      check_index(plan.targets[i]);
      gather.push_back(visible_rows);
      positions.push_back(plan.targets[i] - 1);
      target_rows.push_back(seq_off + static_cast<int>(plan.visible.size() + i));
    }
    latent_off += encoded.lengths[k];
    const int len = static_cast<int>(plan.visible.size() + plan.targets.size());
    lengths.push_back(len);
    seq_off += len;
  }
  Var x = ad::add(ad::gather_rows(source, gather), ad::gather_rows(decoder_tpe(tape), positions));
  for (const auto& b : decoder_) x = block(tape, b, x, lengths, config_.dec_heads);
  x = ad::layer_norm(x, tape.parameter(dec_norm_w_), tape.parameter(dec_norm_b_), config_.ln_eps);
  return ad::gather_rows(x, target_rows);
}

Var Backbone::reconstruct(Tape& tape, Var tokens, int channels, std::span<const SequencePlan> plans) const {
  if (config_.kind == BackboneKind::Mae) return decode_reconstruct(tape, encode(tape, tokens, channels, plans), plans);

  // Plain substitute: visible tokens plus zero-content tokens carrying only
  // their period embedding at the targets, one encoder pass, then dec_proj.
  const int sections = static_cast<int>(tokens.rows()) / channels;
  const Var source = ad::concat_rows({tokens, encoder_tpe(tape)});
  std::vector<int> gather;
  std::vector<int> lengths;
  std::vector<int> target_rows;
  int seq_off = 0;
  for (const auto& plan : plans) {
    if (plan.targets.empty()) throw std::invalid_argument("backbone: at least one target section is required");
    for (int p : plan.visible) {
      if (p < 1 || p > sections) throw std::invalid_argument("backbone: visible index outside embedded sections");
      gather.push_back((p - 1) * channels + plan.channel);
    }
    for (std::size_t i = 0; i < plan.targets.size(); ++i) {
      check_index(plan.targets[i]);
      gather.push_back(static_cast<int>(tokens.rows()) + plan.targets[i] - 1);
      target_rows.push_back(seq_off + static_cast<int>(plan.visible.size() + i));
    }
    const int len = static_cast<int>(plan.visible.size() + plan.targets.size());
    lengths.push_back(len);
    seq_off += len;
  }
  Var x = ad::gather_rows(source, gather);
  for (const auto& b : encoder_) x = block(tape, b, x, lengths, config_.enc_heads);
  x = ad::layer_norm(x, tape.parameter(enc_norm_w_), tape.parameter(enc_norm_b_), config_.ln_eps);
  return ad::linear(ad::gather_rows(x, target_rows), tape.parameter(dec_w_), tape.parameter(dec_b_));
}

}  // namespace vimts::backbone
