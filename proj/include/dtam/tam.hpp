#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "dtam/model.hpp"

namespace dtam {

// Value-level views of the attention regressor.

// u_1..u_M (M x H_word) for one token sequence.
template <typename S>
Mat<S> encode_words(Model<S>& m, const std::vector<int>& ids) {
  Tape<S> t;
  return encode_words(t, m, pack_words({&ids})).value();
}

template <typename S>
struct SummaryRepresentation {
  Vec<S> s;
  Mat<S> attention_weights;  // K x M, rows sum to 1
  Vec<S> theta_used;
};

// a_ij = softmax_j(query(u_j) . alpha_i); s = sum_j sum_i (theta_i - delta_att) a_ij u_j.
template <typename S>
SummaryRepresentation<S> topic_attention_pool(Model<S>& m, const Mat<S>& U, const Vec<S>& theta) {
  require_dims(theta.size() == m.gen.alpha.rows(), "topic_attention_pool: theta size != K");
  Tape<S> t;
  WordBatch wb;
  wb.B = 1;
  wb.M = U.rows();
  wb.lengths = {static_cast<int>(U.rows())};
  Var<S> u = t.constant(U);
  Var<S> s = topic_pool(t, m, u, t.constant(Mat<S>(theta.transpose())), wb);
  Mat<S> scores = mlp_apply<S>(m.att.query_mlp, U) * m.gen.alpha.value.transpose();
  return {s.value().row(0).transpose(), word_attention_value<S>(scores, 0, 1, static_cast<int>(U.rows())), theta};
}

// Trendy summary for one document with a given alpha_t.
template <typename S>
Vec<S> trendy_attention_pool(Model<S>& m, const Mat<S>& U, const Vec<S>& theta, const Mat<S>& alpha_t) {
  Tape<S> t;
  WordBatch wb;
  wb.B = 1;
  wb.M = U.rows();
  wb.lengths = {static_cast<int>(U.rows())};
  return trendy_pool_fixed(t, m, t.constant(U), t.constant(Mat<S>(theta.transpose())), t.constant(alpha_t), wb)
      .value()
      .row(0)
      .transpose();
}

template <typename S>
S predict_rating(Model<S>& m, const Vec<S>& s) {
  Tape<S> t;
  return rating_head(t, m, t.constant(Mat<S>(s.transpose()))).scalar();
}

template <typename S>
S regression_loss(const Vec<S>& r_hat, const std::type_identity_t<Vec<S>>& r) {
  require_dims(r_hat.size() == r.size(), "regression_loss: length mismatch");
  if (r.size() == 0) throw DimensionError("regression_loss: empty batch");
  return std::sqrt((r_hat - r).squaredNorm() / static_cast<S>(r.size()));
}

template <typename S>
S full_loss(S elbo_loss, S reg_loss, S alpha_y) {
  return elbo_loss + alpha_y * reg_loss;
}

template <typename S>
S dst_forward(Model<S>& m, const Vec<S>& zeta) {
  require_dims(zeta.size() == m.att.regressor.input_size(), "dst_forward: zeta dimension mismatch");
  return predict_rating(m, zeta);
}

// w: raw counts over the topic-model vocabulary.
template <typename S>
S mlp_bow_forward(Model<S>& m, const Vec<S>& w) {
  Mat<S> wn = w.transpose();
  if (w.sum() > 0) wn /= w.sum();
  Tape<S> t;
  Var<S> rep = activate(mlp_apply(t, m.att.bow_encoder, t.constant(wn)), m.cfg.activation);
  return rating_head(t, m, rep).scalar();
}

// K x M attention weights as CSV, one row per topic.
template <typename S>
void write_attention_csv(const std::filesystem::path& path, const Mat<S>& a) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) out << (j ? "," : "") << a(i, j);
    out << '\n';
  }
}

}  // namespace dtam
