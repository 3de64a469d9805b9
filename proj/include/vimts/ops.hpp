#pragma once

// Differentiable operators on tape variables. Shapes are checked eagerly and
// violations throw std::invalid_argument.

#include "vimts/autodiff.hpp"

#include <span>
#include <vector>

namespace vimts::ad {

Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// a (r x c) plus a 1 x c row broadcast over rows.
Var add_row(Var a, Var row);
// a (r x c) times an r x 1 column broadcast over columns.
Var mul_col(Var a, Var col);
Var scale(Var a, double factor);

Var relu(Var a);
Var tanh(Var a);
Var sin(Var a);
Var gelu(Var a);
Var square(Var a);

Var sum(Var a);
// Sum of a ⊙ weights, as a 1x1 value. Weights are constants.
Var weighted_sum(Var a, const Matrix& weights);

Var softmax_rows(Var a);
// Softmax down the rows of each column, independently within each row
// segment [offsets[k], offsets[k+1]).
Var segment_softmax(Var a, std::span<const int> offsets);

Var layer_norm(Var x, Var gamma, Var beta, double eps);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);

// out[i] = a[index[i]]; the same source row may appear several times.
Var gather_rows(Var a, std::span<const int> index);
// out[target[i]] += a[i]; rows of `out` that receive nothing are zero.
Var scatter_rows(Var a, std::span<const int> target, Eigen::Index out_rows);
// out[i] = a(rows[i], cols[i]) as an n x 1 column.
Var gather_elements(Var a, std::span<const int> rows, std::span<const int> cols);

// a holds `blocks` stacked (r x k) blocks, b holds `blocks` stacked (k x c)
// blocks (or (c x k) when trans_b); returns the stacked block products.
Var blocked_matmul(Var a, Var b, int blocks, bool trans_b);

// Multi-head scaled dot-product self-attention over independent sequences.
// qkv is (sum(lengths) x 3*width) laid out [Q | K | V]; each run of
// lengths[k] rows is one sequence. Returns (sum(lengths) x width).
Var segment_attention(Var qkv, std::span<const int> lengths, int heads);

inline Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

}  // namespace vimts::ad
