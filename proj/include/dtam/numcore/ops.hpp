#pragma once

#include <cmath>
#include <vector>

#include "dtam/numcore/tape.hpp"

// Differentiable free functions over Var<S>. Matrices follow a row-batch
// convention: an (n x d) operand holds n row vectors of width d.
namespace dtam {

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  require_dims(a.cols() == b.rows(), "matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value() * b.value();
  return t.push(std::move(out), {a, b}, [a, b](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (a.needs_grad()) t.accum(a, g * b.value().transpose());
    if (b.needs_grad()) t.accum(b, a.value().transpose() * g);
  });
}

template <typename S>
Var<S> transpose(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().transpose();
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) { t.accum(a, t.grad(self).transpose()); });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value() + b.value();
  return t.push(std::move(out), {a, b}, [a, b](Tape<S>& t, int self) {
    t.accum(a, t.grad(self));
    t.accum(b, t.grad(self));
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value() - b.value();
  return t.push(std::move(out), {a, b}, [a, b](Tape<S>& t, int self) {
    t.accum(a, t.grad(self));
    t.accum(b, -t.grad(self));
  });
}

// a (n x d) + row (1 x d) broadcast over rows.
template <typename S>
Var<S> add_rowwise(Var<S> a, Var<S> row) {
  require_dims(row.rows() == 1 && row.cols() == a.cols(), "add_rowwise: row width mismatch");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), {a, row}, [a, row](Tape<S>& t, int self) {
    t.accum(a, t.grad(self));
    if (row.needs_grad()) t.accum(row, t.grad(self).colwise().sum());
  });
}

// Elementwise product.
template <typename S>
Var<S> cmul(Var<S> a, Var<S> b) {
  require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "cmul: shape mismatch");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), {a, b}, [a, b](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (a.needs_grad()) t.accum(a, g.cwiseProduct(b.value()));
    if (b.needs_grad()) t.accum(b, g.cwiseProduct(a.value()));
  });
}

// a (n x d) scaled row-by-row by col (n x 1).
template <typename S>
Var<S> cmul_colwise(Var<S> a, Var<S> col) {
  require_dims(col.cols() == 1 && col.rows() == a.rows(), "cmul_colwise: column height mismatch");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().array().colwise() * col.value().col(0).array();
  return t.push(std::move(out), {a, col}, [a, col](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (a.needs_grad()) t.accum(a, (g.array().colwise() * col.value().col(0).array()).matrix());
    if (col.needs_grad()) t.accum(col, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

template <typename S>
Var<S> scale(Var<S> a, S s) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value() * s;
  return t.push(std::move(out), {a}, [a, s](Tape<S>& t, int self) { t.accum(a, t.grad(self) * s); });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S s) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().array() + s;
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) { t.accum(a, t.grad(self)); });
}

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S>
Var<S> operator-(Var<S> a) { return scale(a, S(-1)); }
template <typename S>
Var<S> operator*(S s, Var<S> a) { return scale(a, s); }
template <typename S>
Var<S> operator*(Var<S> a, S s) { return scale(a, s); }

template <typename S>
Var<S> exp(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().array().exp();
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) { t.accum(a, t.grad(self).cwiseProduct(t.value(self))); });
}

// log(max(a, floor)); zero gradient where the floor is active.
template <typename S>
Var<S> log_floor(Var<S> a, S floor) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().array().max(floor).log();
  return t.push(std::move(out), {a}, [a, floor](Tape<S>& t, int self) {
    const auto& x = a.value().array();
    t.accum(a, (t.grad(self).array() * (x > floor).select(x.inverse(), S(0))).matrix());
  });
}

template <typename S>
Var<S> tanh(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().array().tanh();
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) {
    const auto& y = t.value(self).array();
    t.accum(a, (t.grad(self).array() * (S(1) - y.square())).matrix());
  });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().unaryExpr([](S x) { return x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x)); });
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) {
    const auto& y = t.value(self).array();
    t.accum(a, (t.grad(self).array() * y * (S(1) - y)).matrix());
  });
}

template <typename S>
Var<S> relu(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().cwiseMax(S(0));
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) {
    t.accum(a, (t.grad(self).array() * (a.value().array() > S(0)).template cast<S>()).matrix());
  });
}

template <typename S>
Var<S> softplus(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().unaryExpr([](S x) { return x > S(30) ? x : std::log1p(std::exp(x)); });
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) {
    Mat<S> sig = a.value().unaryExpr([](S x) { return x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x)); });
    t.accum(a, t.grad(self).cwiseProduct(sig));
  });
}

template <typename S>
Var<S> square(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().array().square();
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) { t.accum(a, (S(2) * t.grad(self).array() * a.value().array()).matrix()); });
}

// sqrt with a zero subgradient at 0.
template <typename S>
Var<S> sqrt(Var<S> a) {
  if ((a.value().array() < S(0)).any()) throw DomainError("sqrt: negative argument");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().array().sqrt();
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) {
    const auto& y = t.value(self).array();
    t.accum(a, (t.grad(self).array() * (y > S(0)).select(S(0.5) / y, S(0))).matrix());
  });
}

// Elementwise clamp; gradient passes only where the input is inside [lo, hi].
template <typename S>
Var<S> clamp(Var<S> a, S lo, S hi) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().cwiseMax(lo).cwiseMin(hi);
  return t.push(std::move(out), {a}, [a, lo, hi](Tape<S>& t, int self) {
    const auto& x = a.value().array();
    t.accum(a, (t.grad(self).array() * ((x >= lo) && (x <= hi)).template cast<S>()).matrix());
  });
}

// Sum of all entries -> 1x1.
template <typename S>
Var<S> sum(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) {
    t.accum(a, Mat<S>::Constant(a.rows(), a.cols(), t.grad(self)(0, 0)));
  });
}

template <typename S>
Var<S> mean(Var<S> a) {
  return scale(sum(a), S(1) / static_cast<S>(a.value().size()));
}

// Per-row sums -> (n x 1).
template <typename S>
Var<S> sum_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().rowwise().sum();
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) {
    t.accum(a, t.grad(self).col(0).replicate(1, a.cols()));
  });
}

template <typename S>
Mat<S> softmax_rows_value(const Mat<S>& x) {
  Mat<S> out = x.colwise() - x.rowwise().maxCoeff();
  out = out.array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

// Row-wise softmax with max subtraction.
template <typename S>
Var<S> softmax_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> out = softmax_rows_value<S>(a.value());
  return t.push(std::move(out), {a}, [a](Tape<S>& t, int self) {
    const Mat<S>& y = t.value(self);
    const Mat<S>& g = t.grad(self);
    Vec<S> dot = g.cwiseProduct(y).rowwise().sum();
    t.accum(a, (y.array() * (g.array().colwise() - dot.array())).matrix());
  });
}

template <typename S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  require_dims(a.rows() == b.rows(), "concat_cols: row count mismatch");
  Tape<S>& t = *a.tape;
  Mat<S> out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const auto ac = a.cols(), bc = b.cols();
  return t.push(std::move(out), {a, b}, [a, b, ac, bc](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (a.needs_grad()) t.accum_block(a, 0, 0, g.leftCols(ac));
    if (b.needs_grad()) t.accum_block(b, 0, 0, g.rightCols(bc));
  });
}

template <typename S>
Var<S> slice_cols(Var<S> a, Eigen::Index start, Eigen::Index n) {
  require_dims(start >= 0 && start + n <= a.cols(), "slice_cols: out of range");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().middleCols(start, n);
  return t.push(std::move(out), {a}, [a, start, n](Tape<S>& t, int self) {
    t.accum_block(a, 0, start, t.grad(self));
  });
}

template <typename S>
Var<S> slice_rows(Var<S> a, Eigen::Index start, Eigen::Index n) {
  require_dims(start >= 0 && start + n <= a.rows(), "slice_rows: out of range");
  Tape<S>& t = *a.tape;
  Mat<S> out = a.value().middleRows(start, n);
  return t.push(std::move(out), {a}, [a, start, n](Tape<S>& t, int self) {
    t.accum_block(a, start, 0, t.grad(self));
  });
}

// Rows a[idx[0]], a[idx[1]], ... ; used for embedding lookup.
template <typename S>
Var<S> gather_rows(Var<S> a, const std::vector<int>& idx) {
  Tape<S>& t = *a.tape;
  Mat<S> out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require_dims(idx[i] >= 0 && idx[i] < a.rows(), "gather_rows: index " + std::to_string(idx[i]) + " out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return t.push(std::move(out), {a}, [a, idx](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    for (std::size_t i = 0; i < idx.size(); ++i) t.accum_block(a, idx[i], 0, g.row(static_cast<Eigen::Index>(i)));
  });
}

template <typename S>
Var<S> vstack(const std::vector<Var<S>>& parts) {
  require_dims(!parts.empty(), "vstack: no inputs");
  Tape<S>& t = *parts.front().tape;
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  bool ng = false;
  for (const auto& p : parts) {
    require_dims(p.cols() == cols, "vstack: column count mismatch");
    rows += p.rows();
    ng = ng || p.needs_grad();
  }
  Mat<S> out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.push(std::move(out), ng, [parts](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      if (p.needs_grad()) t.accum_block(p, 0, 0, g.middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

// Inverted dropout; identity outside training mode.
template <typename S>
Var<S> dropout(Var<S> a, double rate) {
  Tape<S>& t = *a.tape;
  if (!t.training || rate <= 0.0) return a;
  if (rate >= 1.0) throw DomainError("dropout: rate must be in [0,1)");
  std::bernoulli_distribution keep(1.0 - rate);
  const S scale_kept = S(1) / static_cast<S>(1.0 - rate);
  Mat<S> mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(t.rng()) ? scale_kept : S(0);
  return cmul(a, t.constant(std::move(mask)));
}

// Topic-attention pooling over a padded batch of word sequences.
//   scores : (M*B x K) rows ordered step-major (row j*B + b is word j of doc b)
//   words  : (M*B x H) matching rows
//   weights: (B x K) per-doc topic weights
//   lengths: valid word count per doc (>= 1)
// a[b,i,:] = softmax over valid j of scores[j*B+b, i]
// out[b]   = sum_j (sum_i weights[b,i] a[b,i,j]) words[j*B+b]
template <typename S>
Mat<S> word_attention_value(const Mat<S>& scores, Eigen::Index b, Eigen::Index batch, int length) {
  const Eigen::Index K = scores.cols();
  Mat<S> a(K, length);
  for (int j = 0; j < length; ++j) a.col(j) = scores.row(j * batch + b).transpose();
  Vec<S> mx = a.rowwise().maxCoeff();
  a = (a.colwise() - mx).array().exp();
  a.array().colwise() /= a.rowwise().sum().array();
  return a;
}

template <typename S>
Var<S> attention_pool(Var<S> scores, Var<S> words, Var<S> weights, const std::vector<int>& lengths) {
  const Eigen::Index B = weights.rows();
  const Eigen::Index K = weights.cols();
  require_dims(static_cast<Eigen::Index>(lengths.size()) == B, "attention_pool: lengths size mismatch");
  require_dims(scores.cols() == K && scores.rows() == words.rows() && B > 0 && scores.rows() % B == 0, "attention_pool: shape mismatch");
  const Eigen::Index M = scores.rows() / B;
  for (int L : lengths) require_dims(L >= 1 && L <= M, "attention_pool: invalid sequence length");
  Tape<S>& t = *scores.tape;
  Mat<S> out = Mat<S>::Zero(B, words.cols());
  for (Eigen::Index b = 0; b < B; ++b) {
    Mat<S> a = word_attention_value<S>(scores.value(), b, B, lengths[b]);
    RowVec<S> c = weights.value().row(b) * a;  // 1 x L
    for (int j = 0; j < lengths[b]; ++j) out.row(b) += c(j) * words.value().row(j * B + b);
  }
  return t.push(std::move(out), {scores, words, weights}, [scores, words, weights, lengths, B, K](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    Mat<S> gs = Mat<S>::Zero(scores.rows(), K);
    Mat<S> gw = Mat<S>::Zero(words.rows(), words.cols());
    Mat<S> gwt = Mat<S>::Zero(B, K);
    for (Eigen::Index b = 0; b < B; ++b) {
      const int L = lengths[b];
      Mat<S> a = word_attention_value<S>(scores.value(), b, B, L);
      RowVec<S> w = weights.value().row(b);
      RowVec<S> c = w * a;
      RowVec<S> gu(L);  // g_b . u_j
      for (int j = 0; j < L; ++j) {
        gu(j) = g.row(b).dot(words.value().row(j * B + b));
        gw.row(j * B + b) += c(j) * g.row(b);
      }
      gwt.row(b) = (a * gu.transpose()).transpose();
      Vec<S> mean_gu = a * gu.transpose();  // K
      for (int j = 0; j < L; ++j)
        for (Eigen::Index i = 0; i < K; ++i) gs(j * B + b, i) = w(i) * a(i, j) * (gu(j) - mean_gu(i));
    }
    if (scores.needs_grad()) t.accum(scores, gs);
    if (words.needs_grad()) t.accum(words, gw);
    if (weights.needs_grad()) t.accum(weights, gwt);
  });
}

}  // namespace dtam
