#include "vimts/patchify.hpp"

#include "vimts/errors.hpp"
#include "vimts/init.hpp"
#include "vimts/ops.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vimts::patchify {

void PatchifyConfig::validate() const {
  if (channels < 1) throw ConfigError("patchify: channels must be >= 1");
  if (time_dim < 1) throw ConfigError("patchify: time_dim must be >= 1");
  if (feature_dim < 1) throw ConfigError("patchify: feature_dim must be >= 1");
}

std::vector<double> time_embed(double t, const TimeEmbedParams& params) {
  if (params.omega.size() != params.alpha.size() || params.omega.empty()) {
    throw std::invalid_argument("time_embed: omega/alpha size mismatch");
  }
  std::vector<double> out(params.omega.size());
  out[0] = params.omega[0] * t + params.alpha[0];
  for (std::size_t d = 1; d < out.size(); ++d) out[d] = std::sin(params.omega[d] * t + params.alpha[d]);
  return out;
}

SectionedPoints divide_sections(const std::vector<std::vector<core::Observation>>& per_channel,
                                const SectionGeometry& geometry, int sections) {
  SectionedPoints out(per_channel.size(), std::vector<std::vector<core::Observation>>(static_cast<std::size_t>(sections)));
  for (std::size_t n = 0; n < per_channel.size(); ++n) {
    for (const auto& o : per_channel[n]) {
      const int p = section_index(o.time, geometry.t_start, geometry.size, sections);
      out[n][static_cast<std::size_t>(p - 1)].push_back(o);
    }
  }
  return out;
}

SectionedPoints divide_sections(const core::ImtsSample& sample, const SectionGeometry& geometry, int sections) {
  std::vector<std::vector<core::Observation>> per_channel(static_cast<std::size_t>(sample.channels()));
  for (int n = 0; n < sample.channels(); ++n) per_channel[static_cast<std::size_t>(n)] = sample.channel_series(n);
  return divide_sections(per_channel, geometry, sections);
}

Patchify::Patchify(ad::ParameterSet& params, const PatchifyConfig& config, std::mt19937_64& rng,
                   const std::string& prefix)
    : config_(config) {
  config_.validate();
  const int te = config_.time_dim;
  const int pd = config_.point_dim();
  const int hid = config_.meta_hidden();
  const int din = config_.feature_dim;

  Matrix omega(1, te);
  Matrix alpha(1, te);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::uniform_real_distribution<double> freq(0.0, 2.0 * std::numbers::pi * 4.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  omega(0, 0) = sym(rng);
  alpha(0, 0) = sym(rng);
  for (int d = 1; d < te; ++d) {
    omega(0, d) = freq(rng);
    alpha(0, d) = phase(rng);
  }
  omega_ = params.add(prefix + ".time.omega", omega);
  alpha_ = params.add(prefix + ".time.alpha", alpha);
  fc1_w_ = params.add(prefix + ".ttcn.fc1.weight", init::xavier_uniform(pd, hid, rng));
  fc1_b_ = params.add(prefix + ".ttcn.fc1.bias", Matrix::Zero(1, hid));
  fc2_w_ = params.add(prefix + ".ttcn.fc2.weight", init::xavier_uniform(hid, din, rng));
  fc2_b_ = params.add(prefix + ".ttcn.fc2.bias", Matrix::Zero(1, din));
  value_w_ = params.add(prefix + ".ttcn.value.weight", init::xavier_uniform(pd, din, rng));
  channel_table_ = params.add(prefix + ".channel_embed", init::normal(config_.channels, config_.patch_dim(), 0.1, rng));
}

Var Patchify::time_embed(Tape& tape, std::span<const double> times) const {
  Matrix t(static_cast<Eigen::Index>(times.size()), 1);
  for (std::size_t i = 0; i < times.size(); ++i) t(static_cast<Eigen::Index>(i), 0) = times[i];
  const Var lin = ad::add_row(ad::matmul(tape.constant(std::move(t)), tape.parameter(omega_)), tape.parameter(alpha_));
  if (config_.time_dim == 1) return lin;
  return ad::concat_cols({ad::slice_cols(lin, 0, 1), ad::sin(ad::slice_cols(lin, 1, config_.time_dim - 1))});
}

Var Patchify::ttcn_weights(Tape& tape, Var points, std::span<const int> offsets) const {
  const Var hidden = ad::relu(ad::linear(points, tape.parameter(fc1_w_), tape.parameter(fc1_b_)));
  const Var scores = ad::linear(hidden, tape.parameter(fc2_w_), tape.parameter(fc2_b_));
  return ad::segment_softmax(scores, offsets);
}

Var Patchify::ttcn(Tape& tape, Var points, std::span<const int> offsets) const {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != points.rows()) {
    throw std::invalid_argument("ttcn: offsets do not cover the point rows");
  }
  const std::size_t segments = offsets.size() - 1;
  std::vector<int> segment_of(static_cast<std::size_t>(points.rows()));
  for (std::size_t k = 0; k < segments; ++k) {
    if (offsets[k + 1] <= offsets[k]) throw std::invalid_argument("ttcn: empty segment");
    for (int i = offsets[k]; i < offsets[k + 1]; ++i) segment_of[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  const Var weights = ttcn_weights(tape, points, offsets);
  const Var values = ad::matmul(points, tape.parameter(value_w_));
  return ad::scatter_rows(ad::mul(weights, values), segment_of, static_cast<Eigen::Index>(segments));
}

Var Patchify::points_for(Tape& tape, const std::vector<core::Observation>& pts) const {
  std::vector<double> times(pts.size());
  Matrix x(static_cast<Eigen::Index>(pts.size()), 1);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    times[i] = pts[i].time;
    x(static_cast<Eigen::Index>(i), 0) = pts[i].value;
  }
  return ad::concat_cols({time_embed(tape, times), tape.constant(std::move(x))});
}

PatchGridVar Patchify::assemble(Tape& tape, const SectionedPoints& sectioned, int sections) const {
  const int n_ch = config_.channels;
  if (static_cast<int>(sectioned.size()) != n_ch) throw std::invalid_argument("assemble: channel count mismatch");
  const auto cells = static_cast<std::size_t>(sections * n_ch);

  // Flatten all non-empty cells into one batched TTCN call.
  std::vector<core::Observation> flat;
  std::vector<int> offsets{0};
  std::vector<int> cell_rows;
  PatchGridVar out;
  out.mask_bits.assign(cells, 0);
  for (int p = 0; p < sections; ++p) {
    for (int n = 0; n < n_ch; ++n) {
      const auto& sec = sectioned[static_cast<std::size_t>(n)];
      if (static_cast<int>(sec.size()) != sections) throw std::invalid_argument("assemble: section count mismatch");
      const auto& pts = sec[static_cast<std::size_t>(p)];
      if (pts.empty()) continue;
      flat.insert(flat.end(), pts.begin(), pts.end());
      offsets.push_back(static_cast<int>(flat.size()));
      const int row = p * n_ch + n;
      cell_rows.push_back(row);
      out.mask_bits[static_cast<std::size_t>(row)] = 1;
    }
  }

  Var features;
  if (flat.empty()) {
    features = tape.constant(Matrix::Zero(static_cast<Eigen::Index>(cells), config_.feature_dim));
  } else {
    const Var patches = ttcn(tape, points_for(tape, flat), offsets);
    features = ad::scatter_rows(patches, cell_rows, static_cast<Eigen::Index>(cells));
  }
  Matrix bits(static_cast<Eigen::Index>(cells), 1);
  for (std::size_t i = 0; i < cells; ++i) bits(static_cast<Eigen::Index>(i), 0) = out.mask_bits[i];
  std::vector<int> channel_of(cells);
  for (std::size_t i = 0; i < cells; ++i) channel_of[i] = static_cast<int>(i % static_cast<std::size_t>(n_ch));
  const Var embed = ad::gather_rows(tape.parameter(channel_table_), channel_of);
  out.features = ad::add(ad::concat_cols({features, tape.constant(std::move(bits))}), embed);
  return out;
}

TimeEmbedParams Patchify::time_params(const ad::ParameterSet& params) const {
  const Matrix& w = params[omega_].value;
  const Matrix& a = params[alpha_].value;
  return TimeEmbedParams{std::vector<double>(w.data(), w.data() + w.size()),
                         std::vector<double>(a.data(), a.data() + a.size())};
}

std::vector<double> ttcn_patch(const Patchify& module, const ad::ParameterSet& params,
                               const std::vector<core::Observation>& points) {
  if (points.empty()) throw std::invalid_argument("ttcn_patch: no points");
  Tape tape(&params);
  std::vector<double> times;
  Matrix x(static_cast<Eigen::Index>(points.size()), 1);
  for (std::size_t i = 0; i < points.size(); ++i) {
    times.push_back(points[i].time);
    x(static_cast<Eigen::Index>(i), 0) = points[i].value;
  }
  const Var pts = ad::concat_cols({module.time_embed(tape, times), tape.constant(std::move(x))});
  const std::vector<int> offsets{0, static_cast<int>(points.size())};
  const Matrix& v = module.ttcn(tape, pts, offsets).value();
  return {v.data(), v.data() + v.size()};
}

PatchGrid assemble_patch_grid(const Patchify& module, const ad::ParameterSet& params,
                              const std::vector<std::vector<core::Observation>>& per_channel,
                              const SectionGeometry& geometry, int sections) {
  Tape tape(&params);
  const auto grid = module.assemble(tape, divide_sections(per_channel, geometry, sections), sections);
  PatchGrid out;
  out.features = grid.features.value();
  out.mask_bits = grid.mask_bits;
  out.channels = module.config().channels;
  out.sections = sections;
  out.section_size = geometry.size;
  for (int p = 1; p <= sections; ++p) out.section_starts.push_back(geometry.section_start(p));
  return out;
}

}  // namespace vimts::patchify
