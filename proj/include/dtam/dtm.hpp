#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dtam/model.hpp"

namespace dtam {

// Value-level views of the dynamic topic model. The training path runs the
// same computations on a Tape (see model.hpp).

// beta = rowwise-softmax(alpha rho^T), K x V.
template <typename S>
Mat<S> topic_word_matrix(const Mat<S>& alpha, const std::type_identity_t<Mat<S>>& rho) {
  require_dims(alpha.cols() == rho.cols(), "topic_word_matrix: embedding dims differ");
  return softmax_rows_value<S>(alpha * rho.transpose());
}

template <typename S>
Mat<S> topic_word_matrix(const GenerativeParams<S>& gen) {
  return topic_word_matrix<S>(gen.alpha.value, gen.rho.value);
}

// Transition prior. An empty eta_prev selects the first-step prior N(0, I).
template <typename S>
DiagGaussian<S> eta_prior_step(const Vec<S>& eta_prev, const GenerativeParams<S>& gen) {
  const Eigen::Index d = gen.eta_transition.output_size();
  if (eta_prev.size() == 0) return DiagGaussian<S>::standard(d);
  require_dims(eta_prev.size() == gen.eta_transition.input_size(), "eta_prior_step: eta dimension mismatch");
  Vec<S> mu = mlp_apply<S>(gen.eta_transition, Mat<S>(eta_prev.transpose())).row(0).transpose();
  const S sd = std::exp(gen.transition_logstd());
  return DiagGaussian<S>(std::move(mu), Vec<S>::Constant(d, sd));
}

// N(eta W + c, I).
template <typename S>
DiagGaussian<S> zeta_prior(const Vec<S>& eta, const GenerativeParams<S>& gen) {
  require_dims(eta.size() == gen.zeta_w.rows(), "zeta_prior: eta dimension mismatch");
  Vec<S> mu = (eta.transpose() * gen.zeta_w.value + gen.zeta_c.value).transpose();
  const Eigen::Index d = mu.size();
  return DiagGaussian<S>(std::move(mu), Vec<S>::Ones(d));
}

template <typename S>
Vec<S> decode_theta(const Vec<S>& zeta, const GenerativeParams<S>& gen) {
  require_dims(zeta.size() == gen.theta_decoder.input_size(), "decode_theta: zeta dimension mismatch");
  return softmax<S>(Vec<S>(mlp_apply<S>(gen.theta_decoder, Mat<S>(zeta.transpose())).row(0).transpose()));
}

// sum_v w_v log(theta^T beta[:, v]), log argument floored at 1e-12.
template <typename S>
S bow_log_likelihood(const Vec<S>& w, const Vec<S>& theta, const Mat<S>& beta) {
  require_dims(theta.size() == beta.rows() && w.size() == beta.cols(), "bow_log_likelihood: shape mismatch");
  if ((w.array() < S(0)).any()) throw DomainError("bow_log_likelihood: negative count");
  const RowVec<S> p = theta.transpose() * beta;
  S ll = 0;
  for (Eigen::Index v = 0; v < w.size(); ++v)
    if (w(v) != S(0)) ll += w(v) * std::log(std::max(p(v), S(1e-12)));
  return ll;
}

template <typename S>
S bow_log_likelihood(const Bow& w, const Vec<S>& theta, const Mat<S>& beta) {
  require_dims(theta.size() == beta.rows(), "bow_log_likelihood: shape mismatch");
  S ll = 0;
  for (const auto& [v, c] : w) {
    if (c < 0) throw DomainError("bow_log_likelihood: negative count");
    if (v < 0 || v >= beta.cols()) throw DimensionError("bow_log_likelihood: token id outside vocabulary");
    ll += static_cast<S>(c) * std::log(std::max(S(theta.dot(beta.col(v))), S(1e-12)));
  }
  return ll;
}

template <typename S>
struct LatentTrajectory {
  Mat<S> eta;                              // T x d samples
  std::vector<DiagGaussian<S>> posteriors; // per step
  Mat<S> h;                                // T x H
};

template <typename S>
LatentTrajectory<S> to_trajectory(const ChainPass<S>& c) {
  LatentTrajectory<S> out{c.z.value(), {}, c.h.value()};
  const Mat<S>& m = c.mean.value();
  const Mat<S> sd = c.logstd.value().array().exp();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.posteriors.emplace_back(m.row(i).transpose(), sd.row(i).transpose());
  return out;
}

// Posterior over the global chain for W (T x V normalised slice BoWs).
template <typename S>
LatentTrajectory<S> encode_global(Model<S>& m, const std::type_identity_t<Mat<S>>& W, NoiseSource<S>& noise) {
  Tape<S> t;
  return to_trajectory(encode_global(t, m, W, noise));
}

template <typename S>
LatentTrajectory<S> xi_trajectory(Model<S>& m, const std::type_identity_t<Mat<S>>& W, NoiseSource<S>& noise) {
  Tape<S> t;
  return to_trajectory(encode_xi(t, m, W, noise));
}

// q(zeta | w, eta) and one reparameterised sample. w is a raw count row.
template <typename S>
std::pair<DiagGaussian<S>, Vec<S>> encode_local(Model<S>& m, const std::type_identity_t<Vec<S>>& w,
                                                const std::type_identity_t<Vec<S>>& eta, NoiseSource<S>& noise) {
  Tape<S> t;
  const S total = w.sum();
  Mat<S> wn = w.transpose();
  if (total > 0) wn /= total;
  LocalPass<S> p = encode_local(t, m, t.constant(wn), t.constant(Mat<S>(eta.transpose())), noise);
  Vec<S> mean = p.mean.value().row(0).transpose();
  Vec<S> sd = p.logstd.value().row(0).array().exp().transpose();
  return {DiagGaussian<S>(std::move(mean), std::move(sd)), p.zeta.value().row(0).transpose()};
}

struct ElboTerms {
  double loss = 0;  // -(recon - kl_local - kl_global)
  double recon = 0;
  double kl_local = 0;
  double kl_global = 0;
};

// Single-sample negative ELBO for documents on the chain over W.
template <typename S>
ElboTerms elbo(Model<S>& m, const Mat<S>& W, const Batch<S>& batch, NoiseSource<S>& noise) {
  Tape<S> t;
  LossScales sc;
  sc.regression = false;
  LossTerms<S> l = joint_loss(t, m, W, batch, noise, sc);
  return {static_cast<double>(l.loss.scalar()), static_cast<double>(l.recon.scalar()),
          static_cast<double>(l.kl_local.scalar()), static_cast<double>(l.kl_global.scalar())};
}

// n highest-probability ids per topic, descending; ties by token string when a
// vocabulary is given, else by id. n is clipped to V.
template <typename S>
std::vector<std::vector<int>> top_words(const Mat<S>& beta, int n, const Vocabulary* vocab = nullptr) {
  const int V = static_cast<int>(beta.cols());
  n = std::clamp(n, 0, V);
  std::vector<std::vector<int>> out;
  for (Eigen::Index k = 0; k < beta.rows(); ++k) {
    std::vector<int> ids(V);
    std::iota(ids.begin(), ids.end(), 0);
    std::partial_sort(ids.begin(), ids.begin() + n, ids.end(), [&](int a, int b) {
      if (beta(k, a) != beta(k, b)) return beta(k, a) > beta(k, b);
      if (vocab) return vocab->token(a) < vocab->token(b);
      return a < b;
    });
    ids.resize(n);
    out.push_back(std::move(ids));
  }
  return out;
}

// alpha_t for one xi value.
template <typename S>
Mat<S> dynamic_topic_embeddings(Model<S>& m, const Vec<S>& xi) {
  Tape<S> t;
  return dynamic_alpha(t, m, t.constant(Mat<S>(xi.transpose()))).value();
}

}  // namespace dtam
