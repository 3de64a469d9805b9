#include "vimts/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace vimts::ad {

ParamId ParameterSet::add(std::string name, Matrix init) {
  if (index_.contains(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  const auto id = static_cast<ParamId>(params_.size());
  index_.emplace(name, id);
  params_.push_back(Parameter{std::move(name), std::move(init), true});
  return id;
}

ParamId ParameterSet::id(std::string_view name) const {
  auto found = find(name);
  if (!found) throw std::out_of_range("unknown parameter: " + std::string(name));
  return *found;
}

std::optional<ParamId> ParameterSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::vector<Matrix> ParameterSet::snapshot() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParameterSet::restore(const std::vector<Matrix>& values) {
  if (values.size() != params_.size()) throw std::invalid_argument("snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) params_[i].value = values[i];
}

void ParameterSet::set_all_trainable(bool trainable) {
  for (auto& p : params_) p.trainable = trainable;
}

Gradients::Gradients(const ParameterSet& params) : slots_(static_cast<std::size_t>(params.size())) {}

void Gradients::zero() {
  for (auto& s : slots_) s.resize(0, 0);
}

void Gradients::accumulate(ParamId id, const Matrix& g) {
  auto& slot = slots_[static_cast<std::size_t>(id)];
  if (slot.size() == 0) {
    slot = g;
  } else {
    slot += g;
  }
}

void Gradients::add(const Gradients& other) {
  if (other.slots_.size() != slots_.size()) throw std::invalid_argument("gradient layout mismatch");
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (other.slots_[i].size() > 0) accumulate(static_cast<ParamId>(i), other.slots_[i]);
  }
}

void Gradients::scale(double factor) {
  for (auto& s : slots_) {
    if (s.size() > 0) s *= factor;
  }
}

double Gradients::global_norm() const {
  double sq = 0.0;
  for (const auto& s : slots_) {
    if (s.size() > 0) sq += s.squaredNorm();
  }
  return std::sqrt(sq);
}

Tape::Tape(const ParameterSet* params) : params_(params) {
  if (params_ != nullptr) param_leaf_.assign(static_cast<std::size_t>(params_->size()), -1);
  nodes_.reserve(256);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, -1, false});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(ParamId id) {
  if (params_ == nullptr) throw std::logic_error("tape has no parameter set");
  auto& leaf = param_leaf_.at(static_cast<std::size_t>(id));
  if (leaf >= 0) return Var{this, leaf};
  const auto& p = (*params_)[id];
  nodes_.push_back(Node{p.value, {}, {}, id, p.trainable});
  leaf = static_cast<int>(nodes_.size()) - 1;
  return Var{this, leaf};
}

Var Tape::parameter(std::string_view name) {
  if (params_ == nullptr) throw std::logic_error("tape has no parameter set");
  return parameter(params_->id(name));
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || requires_grad(in);
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, -1, needs});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || requires_grad(in);
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, -1, needs});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
  auto& node = nodes_[static_cast<std::size_t>(v.id)];
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

void Tape::accumulate(Var v, Matrix&& g) {
  auto& node = nodes_[static_cast<std::size_t>(v.id)];
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = std::move(g);
  } else {
    node.grad += g;
  }
}

void Tape::backward(Var scalar) {
  const auto& out = value(scalar);
  if (out.rows() != 1 || out.cols() != 1) throw std::invalid_argument("backward() needs a 1x1 value");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!requires_grad(scalar)) return;
  nodes_[static_cast<std::size_t>(scalar.id)].grad = Matrix::Ones(1, 1);
  for (int i = scalar.id; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.backward || node.grad.size() == 0) continue;
    // The closure may push into earlier nodes only, so this reference stays valid.
    node.backward(*this, node.grad);
  }
}

void Tape::collect(Gradients& out) const {
  for (const auto& n : nodes_) {
    if (n.param >= 0 && n.grad.size() > 0) out.accumulate(n.param, n.grad);
  }
}

}  // namespace vimts::ad
