#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Parameters live in a
// ParameterSet shared (read-only) by any number of tapes; each tape
// accumulates parameter gradients into its own Gradients object, so several
// tapes can run concurrently on different samples.

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vimts::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ParamId = int;

struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = true;
};

class ParameterSet {
 public:
  ParamId add(std::string name, Matrix init);

  ParamId id(std::string_view name) const;
  std::optional<ParamId> find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name).has_value(); }

  Parameter& operator[](ParamId id) { return params_[static_cast<std::size_t>(id)]; }
  const Parameter& operator[](ParamId id) const { return params_[static_cast<std::size_t>(id)]; }

  int size() const { return static_cast<int>(params_.size()); }
  std::size_t scalar_count() const;

  std::vector<Parameter>::iterator begin() { return params_.begin(); }
  std::vector<Parameter>::iterator end() { return params_.end(); }
  std::vector<Parameter>::const_iterator begin() const { return params_.begin(); }
  std::vector<Parameter>::const_iterator end() const { return params_.end(); }

  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);

  void set_all_trainable(bool trainable);

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, ParamId> index_;
};

// Gradient accumulators aligned index-for-index with a ParameterSet.
// Untouched slots stay empty (0x0) so frozen or unused parameters cost nothing.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterSet& params);

  void zero();
  void accumulate(ParamId id, const Matrix& g);
  void add(const Gradients& other);
  void scale(double factor);
  double global_norm() const;

  bool has(ParamId id) const { return slots_[static_cast<std::size_t>(id)].size() > 0; }
  const Matrix& operator[](ParamId id) const { return slots_[static_cast<std::size_t>(id)]; }
  int size() const { return static_cast<int>(slots_.size()); }

 private:
  std::vector<Matrix> slots_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  // Receives the gradient flowing into the node; pushes gradients to inputs.
  using Backward = std::function<void(Tape&, const Matrix&)>;

  explicit Tape(const ParameterSet* params = nullptr);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf for a parameter; repeated calls return the same node.
  Var parameter(ParamId id);
  Var parameter(std::string_view name);

  // Records a derived node. `backward` is dropped when no input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, const std::vector<Var>& inputs, Backward backward);

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  // Gradient of the last backward() target w.r.t. v; empty when none flowed.
  const Matrix& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  void accumulate(Var v, const Matrix& g);
  void accumulate(Var v, Matrix&& g);

  void backward(Var scalar);
  // Adds parameter-leaf gradients into `out`.
  void collect(Gradients& out) const;

  const ParameterSet* parameters() const { return params_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    ParamId param = -1;
    bool requires_grad = false;
  };

  const ParameterSet* params_;
  std::vector<Node> nodes_;
  std::vector<int> param_leaf_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

}  // namespace vimts::ad
