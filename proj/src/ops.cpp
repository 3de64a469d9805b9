#include "vimts/ops.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

namespace vimts::ad {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

void same_tape(Var a, Var b) { require(a.tape == b.tape && a.tape != nullptr, "variables live on different tapes"); }

void same_shape(Var a, Var b, const char* op) {
  same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

template <class F>
Var unary(Var a, Matrix value, F&& local_grad) {
  Tape& t = *a.tape;
  return t.record(std::move(value), {a}, [a, local_grad](Tape& tape, const Matrix& g) {
    tape.accumulate(a, local_grad(tape.value(a), g));
  });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_slope(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

void softmax_row_inplace(Eigen::Ref<Matrix> m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix out = a.value() * b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, Matrix(g * t.value(b).transpose()));
    if (t.requires_grad(b)) t.accumulate(b, Matrix(t.value(a).transpose() * g));
  });
}

Var transpose(Var a) {
  return unary(a, a.value().transpose(), [](const Matrix&, const Matrix& g) { return Matrix(g.transpose()); });
}

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  return a.tape->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  return a.tape->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.accumulate(b, Matrix(-g));
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, Matrix(g.cwiseProduct(t.value(b))));
    if (t.requires_grad(b)) t.accumulate(b, Matrix(g.cwiseProduct(t.value(a))));
  });
}

Var add_row(Var a, Var row) {
  same_tape(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x cols(a)");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, Matrix(g.colwise().sum()));
  });
}

Var mul_col(Var a, Var col) {
  same_tape(a, col);
  require(col.cols() == 1 && col.rows() == a.rows(), "mul_col: column must be rows(a) x 1");
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return a.tape->record(std::move(out), {a, col}, [a, col](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) {
      t.accumulate(a, Matrix(g.array().colwise() * t.value(col).col(0).array()));
    }
    if (t.requires_grad(col)) {
      t.accumulate(col, Matrix(g.cwiseProduct(t.value(a)).rowwise().sum()));
    }
  });
}

Var scale(Var a, double factor) {
  return unary(a, a.value() * factor, [factor](const Matrix&, const Matrix& g) { return Matrix(g * factor); });
}

Var relu(Var a) {
  return unary(a, a.value().cwiseMax(0.0), [](const Matrix& x, const Matrix& g) {
    return Matrix((x.array() > 0.0).select(g, 0.0));
  });
}

Var tanh(Var a) {
  return unary(a, a.value().array().tanh(), [](const Matrix& x, const Matrix& g) {
    return Matrix(g.array() * (1.0 - x.array().tanh().square()));
  });
}

Var sin(Var a) {
  return unary(a, a.value().array().sin(), [](const Matrix& x, const Matrix& g) {
    return Matrix(g.array() * x.array().cos());
  });
}

Var gelu(Var a) {
  return unary(a, a.value().unaryExpr(&gelu_value), [](const Matrix& x, const Matrix& g) {
    return Matrix(g.array() * x.unaryExpr(&gelu_slope).array());
  });
}

Var square(Var a) {
  return unary(a, a.value().array().square(), [](const Matrix& x, const Matrix& g) {
    return Matrix(2.0 * g.array() * x.array());
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const auto r = a.rows();
  const auto c = a.cols();
  return unary(a, std::move(out), [r, c](const Matrix&, const Matrix& g) {
    return Matrix(Matrix::Constant(r, c, g(0, 0)));
  });
}

Var weighted_sum(Var a, const Matrix& weights) {
  require(weights.rows() == a.rows() && weights.cols() == a.cols(), "weighted_sum: weight shape mismatch");
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  return unary(a, std::move(out), [weights](const Matrix&, const Matrix& g) { return Matrix(weights * g(0, 0)); });
}

Var softmax_rows(Var a) {
  Matrix y = a.value();
  softmax_row_inplace(y);
  Tape& t = *a.tape;
  if (!t.requires_grad(a)) return t.constant(std::move(y));
  auto probs = std::make_shared<Matrix>(y);
  return t.record(std::move(y), {a}, [a, probs](Tape& tape, const Matrix& g) {
    const Matrix& p = *probs;
    Eigen::VectorXd dots = g.cwiseProduct(p).rowwise().sum();
    tape.accumulate(a, Matrix(p.array() * (g.colwise() - dots).array()));
  });
}

Var segment_softmax(Var a, std::span<const int> offsets) {
  require(offsets.size() >= 1 && offsets.front() == 0 && offsets.back() == a.rows(),
          "segment_softmax: offsets must start at 0 and end at rows(a)");
  std::vector<int> off(offsets.begin(), offsets.end());
  Matrix y = a.value();
  for (std::size_t k = 0; k + 1 < off.size(); ++k) {
    const int lo = off[k];
    const int len = off[k + 1] - lo;
    require(len >= 0, "segment_softmax: offsets must be non-decreasing");
    if (len == 0) continue;
    auto blk = y.middleRows(lo, len);
    for (Eigen::Index c = 0; c < blk.cols(); ++c) {
      const double mx = blk.col(c).maxCoeff();
      blk.col(c) = (blk.col(c).array() - mx).exp();
      blk.col(c) /= blk.col(c).sum();
    }
  }
  Tape& t = *a.tape;
  if (!t.requires_grad(a)) return t.constant(std::move(y));
  auto probs = std::make_shared<Matrix>(y);
  return t.record(std::move(y), {a}, [a, probs, off](Tape& tape, const Matrix& g) {
    const Matrix& p = *probs;
    Matrix ga(p.rows(), p.cols());
    for (std::size_t k = 0; k + 1 < off.size(); ++k) {
      const int lo = off[k];
      const int len = off[k + 1] - lo;
      if (len == 0) continue;
      auto pb = p.middleRows(lo, len);
      auto gb = g.middleRows(lo, len);
      Eigen::RowVectorXd dots = gb.cwiseProduct(pb).colwise().sum();
      ga.middleRows(lo, len) = pb.array() * (gb.rowwise() - dots).array();
    }
    tape.accumulate(a, std::move(ga));
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  same_tape(x, gamma);
  same_tape(x, beta);
  const auto d = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == d && beta.rows() == 1 && beta.cols() == d,
          "layer_norm: gamma/beta must be 1 x cols(x)");
  const Matrix& xv = x.value();
  auto xhat = std::make_shared<Matrix>(xv.rows(), d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    xhat->row(r) = (xv.row(r).array() - mean) * is;
  }
  Matrix y = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return x.tape->record(std::move(y), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, d](Tape& t, const Matrix& g) {
    if (t.requires_grad(gamma)) t.accumulate(gamma, Matrix(g.cwiseProduct(*xhat).colwise().sum()));
    if (t.requires_grad(beta)) t.accumulate(beta, Matrix(g.colwise().sum()));
    if (t.requires_grad(x)) {
      Matrix gx_hat = g.array().rowwise() * t.value(gamma).row(0).array();
      Matrix gx(gx_hat.rows(), d);
      const double inv_d = 1.0 / static_cast<double>(d);
      for (Eigen::Index r = 0; r < gx.rows(); ++r) {
        const double m1 = gx_hat.row(r).sum() * inv_d;
        const double m2 = gx_hat.row(r).dot(xhat->row(r)) * inv_d;
        gx.row(r) = (*inv_std)(r) * (gx_hat.row(r).array() - m1 - xhat->row(r).array() * m2);
      }
      t.accumulate(x, std::move(gx));
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    same_tape(parts.front(), p);
    require(p.rows() == rows, "concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> starts;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    starts.push_back(c);
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts.front().tape->record(std::move(out), parts, [parts, starts](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (t.requires_grad(parts[i])) t.accumulate(parts[i], Matrix(g.middleCols(starts[i], parts[i].cols())));
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const auto cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    same_tape(parts.front(), p);
    require(p.cols() == cols, "concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> starts;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    starts.push_back(r);
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts.front().tape->record(std::move(out), parts, [parts, starts](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (t.requires_grad(parts[i])) t.accumulate(parts[i], Matrix(g.middleRows(starts[i], parts[i].rows())));
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  const auto r = a.rows();
  const auto c = a.cols();
  return unary(a, a.value().middleCols(start, count), [start, count, r, c](const Matrix&, const Matrix& g) {
    Matrix ga = Matrix::Zero(r, c);
    ga.middleCols(start, count) = g;
    return ga;
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  const auto r = a.rows();
  const auto c = a.cols();
  return unary(a, a.value().middleRows(start, count), [start, count, r, c](const Matrix&, const Matrix& g) {
    Matrix ga = Matrix::Zero(r, c);
    ga.middleRows(start, count) = g;
    return ga;
  });
}

Var gather_rows(Var a, std::span<const int> index) {
  const Matrix& av = a.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), av.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] >= 0 && index[i] < av.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = av.row(index[i]);
  }
  std::vector<int> idx(index.begin(), index.end());
  const auto r = av.rows();
  return unary(a, std::move(out), [idx, r](const Matrix&, const Matrix& g) {
    Matrix ga = Matrix::Zero(r, g.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    return ga;
  });
}

Var scatter_rows(Var a, std::span<const int> target, Eigen::Index out_rows) {
  require(static_cast<Eigen::Index>(target.size()) == a.rows(), "scatter_rows: one target per input row");
  const Matrix& av = a.value();
  Matrix out = Matrix::Zero(out_rows, av.cols());
  for (std::size_t i = 0; i < target.size(); ++i) {
    require(target[i] >= 0 && target[i] < out_rows, "scatter_rows: target out of range");
    out.row(target[i]) += av.row(static_cast<Eigen::Index>(i));
  }
  std::vector<int> tgt(target.begin(), target.end());
  return unary(a, std::move(out), [tgt](const Matrix&, const Matrix& g) {
    Matrix ga(static_cast<Eigen::Index>(tgt.size()), g.cols());
    for (std::size_t i = 0; i < tgt.size(); ++i) ga.row(static_cast<Eigen::Index>(i)) = g.row(tgt[i]);
    return ga;
  });
}

Var gather_elements(Var a, std::span<const int> rows, std::span<const int> cols) {
  require(rows.size() == cols.size(), "gather_elements: rows/cols length mismatch");
  const Matrix& av = a.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < av.rows() && cols[i] >= 0 && cols[i] < av.cols(),
            "gather_elements: index out of range");
    out(static_cast<Eigen::Index>(i), 0) = av(rows[i], cols[i]);
  }
  std::vector<int> rr(rows.begin(), rows.end());
  std::vector<int> cc(cols.begin(), cols.end());
  const auto r = av.rows();
  const auto c = av.cols();
  return unary(a, std::move(out), [rr, cc, r, c](const Matrix&, const Matrix& g) {
    Matrix ga = Matrix::Zero(r, c);
    for (std::size_t i = 0; i < rr.size(); ++i) ga(rr[i], cc[i]) += g(static_cast<Eigen::Index>(i), 0);
    return ga;
  });
}

Var blocked_matmul(Var a, Var b, int blocks, bool trans_b) {
  same_tape(a, b);
  require(blocks >= 1, "blocked_matmul: blocks must be positive");
  require(a.rows() % blocks == 0 && b.rows() % blocks == 0, "blocked_matmul: rows not divisible by blocks");
  const Eigen::Index r = a.rows() / blocks;
  const Eigen::Index k = a.cols();
  const Eigen::Index b_rows = b.rows() / blocks;
  Eigen::Index c = 0;
  if (trans_b) {
    require(b.cols() == k, "blocked_matmul: inner dimension mismatch");
    c = b_rows;
  } else {
    require(b_rows == k, "blocked_matmul: inner dimension mismatch");
    c = b.cols();
  }
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out(r * blocks, c);
  for (int blk = 0; blk < blocks; ++blk) {
    auto ab = av.middleRows(blk * r, r);
    auto bb = bv.middleRows(blk * b_rows, b_rows);
    if (trans_b) {
      out.middleRows(blk * r, r).noalias() = ab * bb.transpose();
    } else {
      out.middleRows(blk * r, r).noalias() = ab * bb;
    }
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, blocks, r, b_rows, trans_b](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (t.requires_grad(a)) {
      Matrix ga(av.rows(), av.cols());
      for (int blk = 0; blk < blocks; ++blk) {
        auto gb = g.middleRows(blk * r, r);
        auto bb = bv.middleRows(blk * b_rows, b_rows);
        if (trans_b) {
          ga.middleRows(blk * r, r).noalias() = gb * bb;
        } else {
          ga.middleRows(blk * r, r).noalias() = gb * bb.transpose();
        }
      }
      t.accumulate(a, std::move(ga));
    }
    if (t.requires_grad(b)) {
      Matrix gbm(bv.rows(), bv.cols());
      for (int blk = 0; blk < blocks; ++blk) {
        auto gb = g.middleRows(blk * r, r);
        auto ab = av.middleRows(blk * r, r);
        if (trans_b) {
          gbm.middleRows(blk * b_rows, b_rows).noalias() = gb.transpose() * ab;
        } else {
          gbm.middleRows(blk * b_rows, b_rows).noalias() = ab.transpose() * gb;
        }
      }
      t.accumulate(b, std::move(gbm));
    }
  });
}

Var segment_attention(Var qkv, std::span<const int> lengths, int heads) {
  require(heads >= 1, "segment_attention: heads must be positive");
  require(qkv.cols() % 3 == 0, "segment_attention: qkv width must be 3 * width");
  const Eigen::Index width = qkv.cols() / 3;
  require(width % heads == 0, "segment_attention: width not divisible by heads");
  const Eigen::Index dh = width / heads;
  std::vector<int> len(lengths.begin(), lengths.end());
  Eigen::Index total = 0;
  for (int l : len) {
    require(l >= 1, "segment_attention: empty sequence");
    total += l;
  }
  require(total == qkv.rows(), "segment_attention: lengths must sum to rows(qkv)");
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix& x = qkv.value();
  Matrix out(total, width);
  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(len.size() * static_cast<std::size_t>(heads));
  Eigen::Index off = 0;
  for (int l : len) {
    for (int h = 0; h < heads; ++h) {
      auto q = x.block(off, h * dh, l, dh);
      auto k = x.block(off, width + h * dh, l, dh);
      auto v = x.block(off, 2 * width + h * dh, l, dh);
      Matrix s = (q * k.transpose()) * sc;
      softmax_row_inplace(s);
      out.block(off, h * dh, l, dh).noalias() = s * v;
      probs->push_back(std::move(s));
    }
    off += l;
  }
  return qkv.tape->record(std::move(out), {qkv}, [qkv, len, heads, width, dh, sc, probs](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(qkv);
    Matrix gx(x.rows(), x.cols());
    Eigen::Index off = 0;
    std::size_t pi = 0;
    for (int l : len) {
      for (int h = 0; h < heads; ++h, ++pi) {
        const Matrix& p = (*probs)[pi];
        auto q = x.block(off, h * dh, l, dh);
        auto k = x.block(off, width + h * dh, l, dh);
        auto v = x.block(off, 2 * width + h * dh, l, dh);
        auto go = g.block(off, h * dh, l, dh);
        gx.block(off, 2 * width + h * dh, l, dh).noalias() = p.transpose() * go;
        Matrix dp = go * v.transpose();
        Eigen::VectorXd dots = dp.cwiseProduct(p).rowwise().sum();
        Matrix ds = p.array() * (dp.colwise() - dots).array();
        gx.block(off, h * dh, l, dh).noalias() = (ds * k) * sc;
        gx.block(off, width + h * dh, l, dh).noalias() = (ds.transpose() * q) * sc;
      }
      off += l;
    }
    t.accumulate(qkv, std::move(gx));
  });
}

}  // namespace vimts::ad
