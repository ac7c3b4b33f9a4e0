#include "dtam/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace dtam {

namespace {

std::vector<int> sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

template <typename S>
Mat<S> small_normal(Eigen::Index r, Eigen::Index c, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sd);
  Mat<S> m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = static_cast<S>(n(rng));
  return m;
}

template <typename S>
S logstd_of(double delta, bool is_variance) {
  return static_cast<S>(is_variance ? 0.5 * std::log(delta) : std::log(delta));
}

template <typename S>
ChainPass<S> run_chain(Tape<S>& t, RecurrentParams<S>& rec, MlpParams<S>& mean_net, MlpParams<S>& logstd_net,
                       MlpParams<S>& transition, S prior_logstd, bool per_step, S clamp_at, const Mat<S>& W,
                       NoiseSource<S>& noise) {
  const Eigen::Index T = W.rows();
  if (T == 0) throw DataError("cannot encode an empty timeline (T = 0)");
  require_dims(W.cols() == rec.input_size, "chain: BoW width " + std::to_string(W.cols()) + " != " + std::to_string(rec.input_size));
  const Eigen::Index d = transition.output_size();
  ChainPass<S> out;
  out.h = recurrent_run(t, rec, t.constant(W), 1);
  const Mat<S> eps = noise.normal(T, d);
  Var<S> prev = t.constant(Mat<S>::Zero(1, d));
  std::vector<Var<S>> zs, ms, ls;
  for (Eigen::Index i = 0; i < T; ++i) {
    Var<S> h = slice_rows(out.h, per_step ? i : T - 1, 1);
    Var<S> ctx = concat_cols(prev, h);
    Var<S> m = mlp_apply(t, mean_net, ctx);
    Var<S> l = clamp(mlp_apply(t, logstd_net, ctx), -clamp_at, clamp_at);
    Var<S> z = add(m, cmul(exp(l), t.constant(eps.row(i))));
    zs.push_back(z);
    ms.push_back(m);
    ls.push_back(l);
    prev = z;
  }
  out.z = vstack(zs);
  out.mean = vstack(ms);
  out.logstd = vstack(ls);
  Var<S> zero = t.constant(Mat<S>::Zero(1, d));
  out.kl = kl_diag_gaussian(ms.front(), ls.front(), zero, zero);
  if (T > 1) {
    Var<S> prior_mean = mlp_apply(t, transition, slice_rows(out.z, 0, T - 1));
    Var<S> prior_logstd_v = t.constant(Mat<S>::Constant(T - 1, d, prior_logstd));
    out.kl = add(out.kl, kl_diag_gaussian(slice_rows(out.mean, 1, T - 1), slice_rows(out.logstd, 1, T - 1), prior_mean,
                                          prior_logstd_v));
  }
  return out;
}

// Rows of the step-major word batch that belong to documents in `docs`.
template <typename S>
Mat<S> doc_row_mask(const WordBatch& wb, const std::vector<Eigen::Index>& docs) {
  Mat<S> mask = Mat<S>::Zero(wb.M * wb.B, 1);
  for (Eigen::Index b : docs)
    for (Eigen::Index j = 0; j < wb.M; ++j) mask(j * wb.B + b, 0) = S(1);
  return mask;
}

template <typename S>
Var<S> topic_model_loss(const LossTerms<S>& l, const LossScales& sc) {
  const S kl = static_cast<S>(sc.kl);
  return add(scale(sub(scale(l.kl_local, kl), l.recon), static_cast<S>(sc.doc)),
             scale(l.kl_global, static_cast<S>(sc.global) * kl));
}

}  // namespace

// ---------------------------------------------------------------- Model

template <typename S>
Model<S> Model<S>::init(const ModelConfig& config, std::uint64_t seed) {
  Model m;
  m.cfg = config.resolved();
  m.cfg.validate();
  const ModelConfig& c = m.cfg;
  std::mt19937_64 rng(seed);
  const Activation act = c.activation;

  if (c.has_topic_model()) {
    m.gen.alpha = Param<S>(glorot_uniform<S>(c.K, c.E, rng));
    m.gen.rho = Param<S>(glorot_uniform<S>(c.V, c.E, rng));
    m.gen.eta_transition = MlpParams<S>::init(sizes(c.eta_dim, c.transition_hidden, c.eta_dim), act, c.dropout, rng);
    m.gen.zeta_w = Param<S>(glorot_uniform<S>(c.eta_dim, c.zeta_dim, rng));
    m.gen.zeta_c = Param<S>(Mat<S>::Zero(1, c.zeta_dim));
    m.gen.theta_decoder = MlpParams<S>::init(sizes(c.zeta_dim, c.decoder_hidden, c.K), act, c.dropout, rng);
    m.gen.delta_tr = c.delta_tr;
    m.gen.delta_is_variance = c.delta_is_variance;

    m.inf.local_mean = MlpParams<S>::init(sizes(c.V + c.eta_dim, c.encoder_hidden, c.zeta_dim), act, c.dropout, rng);
    m.inf.local_logstd = MlpParams<S>::init(sizes(c.V + c.eta_dim, c.encoder_hidden, c.zeta_dim), act, c.dropout, rng);
    m.inf.global_mean =
        MlpParams<S>::init(sizes(c.eta_dim + c.global_hidden, c.global_head_hidden, c.eta_dim), act, c.dropout, rng);
    m.inf.global_logstd =
        MlpParams<S>::init(sizes(c.eta_dim + c.global_hidden, c.global_head_hidden, c.eta_dim), act, c.dropout, rng);
    m.inf.bow_recurrence = RecurrentParams<S>::init(c.global_cell, c.V, c.global_hidden, c.global_layers, c.dropout, rng);
  }

  if (c.has_attention()) {
    m.att.lm_embeddings = Param<S>(small_normal<S>(c.lm_vocab, c.lm_embed, 0.1, rng));
    m.att.word_encoder = RecurrentParams<S>::init(CellKind::Gru, c.lm_embed, c.word_hidden, 1, 0.0, rng);
    m.att.query_mlp = MlpParams<S>::init(sizes(c.word_hidden, c.query_hidden, c.E), act, c.dropout, rng);
    m.att.regressor = MlpParams<S>::init(sizes(c.word_hidden, c.regressor_hidden, 1), act, c.dropout, rng);
  } else if (c.kind == ModelKind::Dst) {
    m.att.regressor = MlpParams<S>::init(sizes(c.zeta_dim, c.regressor_hidden, 1), act, c.dropout, rng);
  } else if (c.kind == ModelKind::Mlp) {
    m.att.bow_encoder = MlpParams<S>::init(sizes(c.V, c.encoder_hidden, c.mlp_repr), act, c.dropout, rng);
    m.att.regressor = MlpParams<S>::init(sizes(c.mlp_repr, c.regressor_hidden, 1), act, c.dropout, rng);
  }
  m.att.delta_att = c.delta_att;
  m.att.alpha_y = c.alpha_y;

  if (c.trend) {
    TrendParams<S> tr;
    tr.xi_transition = MlpParams<S>::init(sizes(c.xi_dim, c.transition_hidden, c.xi_dim), act, c.dropout, rng);
    tr.delta_xi = c.delta_xi;
    tr.xi_mean = MlpParams<S>::init(sizes(c.xi_dim + c.global_hidden, c.global_head_hidden, c.xi_dim), act, c.dropout, rng);
    tr.xi_logstd = MlpParams<S>::init(sizes(c.xi_dim + c.global_hidden, c.global_head_hidden, c.xi_dim), act, c.dropout, rng);
    tr.xi_recurrence = RecurrentParams<S>::init(c.global_cell, c.V, c.global_hidden, c.global_layers, c.dropout, rng);
    tr.ma_q = Param<S>(glorot_uniform<S>(c.xi_dim, c.E, rng));
    tr.ma_k = Param<S>(glorot_uniform<S>(c.E, c.E, rng));
    tr.ma_v = Param<S>(glorot_uniform<S>(c.E, c.E, rng));
    tr.mu_q = Param<S>(glorot_uniform<S>(c.E, c.E, rng));
    tr.mu_k = Param<S>(glorot_uniform<S>(c.word_hidden, c.E, rng));
    tr.mu_v = Param<S>(glorot_uniform<S>(c.word_hidden, c.word_hidden, rng));
    tr.gate_clamp = c.trend_gate_clamp;
    tr.residual_outside = c.residual_outside;
    m.trend = std::move(tr);
  }
  return m;
}

template <typename S>
NamedParams<S> Model<S>::named() {
  NamedParams<S> out;
  visit([&out](const std::string& name, Param<S>& p) { out.emplace_back(name, &p); });
  return out;
}

template <typename S>
std::size_t Model<S>::num_parameters() {
  std::size_t n = 0;
  visit([&n](const std::string&, Param<S>& p) { n += static_cast<std::size_t>(p.value.size()); });
  return n;
}

template <typename S>
void Model<S>::zero_grad() {
  visit([](const std::string&, Param<S>& p) { p.zero_grad(); });
}

// ---------------------------------------------------------------- passes

template <typename S>
ChainPass<S> encode_global(Tape<S>& t, Model<S>& m, const Mat<S>& W, NoiseSource<S>& noise) {
  if (!m.cfg.has_topic_model()) throw UsageError("encode_global: model has no topic model");
  return run_chain(t, m.inf.bow_recurrence, m.inf.global_mean, m.inf.global_logstd, m.gen.eta_transition,
                   m.gen.transition_logstd(), m.cfg.per_step_global, static_cast<S>(m.cfg.logstd_clamp), W, noise);
}

template <typename S>
ChainPass<S> encode_xi(Tape<S>& t, Model<S>& m, const Mat<S>& W, NoiseSource<S>& noise) {
  if (!m.trend) throw UsageError("xi_trajectory: trend extension is disabled");
  auto& tr = *m.trend;
  return run_chain(t, tr.xi_recurrence, tr.xi_mean, tr.xi_logstd, tr.xi_transition,
                   logstd_of<S>(tr.delta_xi, m.cfg.delta_is_variance), true, static_cast<S>(m.cfg.logstd_clamp), W, noise);
}

template <typename S>
Var<S> zeta_prior_mean(Tape<S>& t, Model<S>& m, Var<S> eta_rows) {
  return add_rowwise(matmul(eta_rows, t.param(m.gen.zeta_w)), t.param(m.gen.zeta_c));
}

template <typename S>
LocalPass<S> encode_local(Tape<S>& t, Model<S>& m, Var<S> w_norm, Var<S> eta_rows, NoiseSource<S>& noise) {
  require_dims(w_norm.rows() == eta_rows.rows(), "encode_local: batch size mismatch");
  const S c = static_cast<S>(m.cfg.logstd_clamp);
  Var<S> ctx = concat_cols(w_norm, eta_rows);
  LocalPass<S> out;
  out.mean = mlp_apply(t, m.inf.local_mean, ctx);
  out.logstd = clamp(mlp_apply(t, m.inf.local_logstd, ctx), -c, c);
  out.zeta = add(out.mean, cmul(exp(out.logstd), t.constant(noise.normal(out.mean.rows(), out.mean.cols()))));
  Var<S> prior = zeta_prior_mean(t, m, eta_rows);
  out.kl = kl_diag_gaussian(out.mean, out.logstd, prior, t.constant(Mat<S>::Zero(prior.rows(), prior.cols())));
  return out;
}

template <typename S>
Var<S> topic_word(Tape<S>& t, Model<S>& m) {
  return softmax_rows(matmul(t.param(m.gen.alpha), transpose(t.param(m.gen.rho))));
}

template <typename S>
Var<S> decode(Tape<S>& t, Model<S>& m, Var<S> zeta) {
  return softmax_rows(mlp_apply(t, m.gen.theta_decoder, zeta));
}

WordBatch pack_words(const std::vector<const std::vector<int>*>& seqs) {
  WordBatch wb;
  wb.B = static_cast<Eigen::Index>(seqs.size());
  if (wb.B == 0) throw DimensionError("pack_words: empty batch");
  for (const auto* s : seqs) {
    if (s->empty()) throw DataError("encode_words: document has no tokens");
    wb.lengths.push_back(static_cast<int>(s->size()));
    wb.M = std::max<Eigen::Index>(wb.M, static_cast<Eigen::Index>(s->size()));
  }
  wb.ids.assign(static_cast<std::size_t>(wb.M * wb.B), 0);
  for (Eigen::Index b = 0; b < wb.B; ++b)
    for (std::size_t j = 0; j < seqs[b]->size(); ++j) wb.ids[j * wb.B + b] = (*seqs[b])[j];
  return wb;
}

template <typename S>
Var<S> encode_words(Tape<S>& t, Model<S>& m, const WordBatch& wb) {
  const int n = static_cast<int>(m.att.lm_embeddings.rows());
  for (int id : wb.ids)
    if (id < 0 || id >= n) throw DataError("encode_words: token id " + std::to_string(id) + " outside LM vocabulary");
  Var<S> emb = gather_rows(t.param(m.att.lm_embeddings), wb.ids);
  return recurrent_run(t, m.att.word_encoder, emb, wb.B, wb.lengths);
}

template <typename S>
Var<S> topic_pool(Tape<S>& t, Model<S>& m, Var<S> U, Var<S> theta, const WordBatch& wb) {
  Var<S> q = mlp_apply(t, m.att.query_mlp, U);
  Var<S> scores = matmul(q, transpose(t.param(m.gen.alpha)));
  return attention_pool(scores, U, add_scalar(theta, static_cast<S>(-m.att.delta_att)), wb.lengths);
}

template <typename S>
Var<S> dynamic_alpha(Tape<S>& t, Model<S>& m, Var<S> xi_row) {
  if (!m.trend) throw UsageError("dynamic_topic_embeddings: trend extension is disabled");
  auto& tr = *m.trend;
  Var<S> alpha = t.param(m.gen.alpha);
  Var<S> q = matmul(xi_row, t.param(tr.ma_q));   // 1 x E
  Var<S> k = matmul(alpha, t.param(tr.ma_k));    // K x E
  Var<S> v = matmul(alpha, t.param(tr.ma_v));    // K x E
  const S inv_sqrt_e = S(1) / std::sqrt(static_cast<S>(alpha.cols()));
  Var<S> expo = scale(matmul(k, transpose(q)), inv_sqrt_e);  // K x 1
  if (tr.gate_clamp) {
    expo = clamp(expo, S(-20), S(20));
  } else if (expo.value().maxCoeff() > std::log(std::numeric_limits<S>::max())) {
    throw NumericError("dynamic_topic_embeddings: gate exponent overflows; enable trend_gate_clamp");
  }
  return cmul_colwise(v, exp(expo));
}

template <typename S>
Var<S> trendy_scores(Tape<S>& t, Model<S>& m, Var<S> ku, Var<S> alpha_t) {
  const S inv_sqrt_e = S(1) / std::sqrt(static_cast<S>(m.gen.alpha.cols()));
  Var<S> qa = matmul(alpha_t, t.param(m.trend->mu_q));  // K x E
  return scale(matmul(ku, transpose(qa)), inv_sqrt_e);  // MB x K
}

// Value term plus the residual: K * sum_j u_j as written, or mean_j u_j when
// placed outside the double sum.
template <typename S>
Var<S> trendy_finish(Tape<S>& t, Model<S>& m, Var<S> U, Var<S> theta, Var<S> scores, const WordBatch& wb) {
  auto& tr = *m.trend;
  const Eigen::Index B = wb.B;
  Var<S> s = attention_pool(scores, matmul(U, t.param(tr.mu_v)), theta, wb.lengths);
  const S K = static_cast<S>(m.gen.alpha.rows());
  Mat<S> R = Mat<S>::Zero(B, wb.M * B);
  for (Eigen::Index b = 0; b < B; ++b)
    for (int j = 0; j < wb.lengths[b]; ++j) R(b, j * B + b) = tr.residual_outside ? S(1) / S(wb.lengths[b]) : K;
  return add(s, matmul(t.constant(std::move(R)), U));
}

template <typename S>
Var<S> trendy_pool_fixed(Tape<S>& t, Model<S>& m, Var<S> U, Var<S> theta, Var<S> alpha_t, const WordBatch& wb) {
  if (!m.trend) throw UsageError("trendy_attention_pool: trend extension is disabled");
  require_dims(theta.rows() == wb.B, "trendy_pool: batch size mismatch");
  Var<S> ku = matmul(U, t.param(m.trend->mu_k));
  return trendy_finish(t, m, U, theta, trendy_scores(t, m, ku, alpha_t), wb);
}

template <typename S>
Var<S> trendy_pool(Tape<S>& t, Model<S>& m, Var<S> U, Var<S> theta, Var<S> xi_rows, const WordBatch& wb) {
  if (!m.trend) throw UsageError("trendy_attention_pool: trend extension is disabled");
  const Eigen::Index B = wb.B;
  require_dims(xi_rows.rows() == B && theta.rows() == B, "trendy_pool: batch size mismatch");

  // Documents sharing a xi value share alpha_t.
  std::vector<std::vector<Eigen::Index>> groups;
  const Mat<S>& xv = xi_rows.value();
  for (Eigen::Index b = 0; b < B; ++b) {
    bool placed = false;
    for (auto& g : groups)
      if (xv.row(g.front()) == xv.row(b)) {
        g.push_back(b);
        placed = true;
        break;
      }
    if (!placed) groups.push_back({b});
  }

  Var<S> ku = matmul(U, t.param(m.trend->mu_k));  // MB x E
  Var<S> scores;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    Var<S> sg = trendy_scores(t, m, ku, dynamic_alpha(t, m, slice_rows(xi_rows, groups[gi].front(), 1)));
    if (groups.size() > 1) sg = cmul_colwise(sg, t.constant(doc_row_mask<S>(wb, groups[gi])));
    scores = gi == 0 ? sg : add(scores, sg);
  }
  return trendy_finish(t, m, U, theta, scores, wb);
}

template <typename S>
Var<S> rating_head(Tape<S>& t, Model<S>& m, Var<S> s) {
  return sigmoid(mlp_apply(t, m.att.regressor, s));
}

template <typename S>
Var<S> rmse(Var<S> pred, Var<S> target) {
  require_dims(pred.rows() == target.rows() && pred.cols() == target.cols(), "regression_loss: length mismatch");
  if (pred.rows() * pred.cols() == 0) throw DimensionError("regression_loss: empty batch");
  return sqrt(mean(square(sub(pred, target))));
}

template <typename S>
Mat<S> bow_matrix(const std::vector<const Document*>& docs, int V, bool normalize) {
  Mat<S> w = Mat<S>::Zero(static_cast<Eigen::Index>(docs.size()), V);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    S total = 0;
    for (const auto& [v, c] : docs[d]->bow) {
      if (v < 0 || v >= V) throw DataError("bow_matrix: token id outside vocabulary");
      w(static_cast<Eigen::Index>(d), v) = static_cast<S>(c);
      total += static_cast<S>(c);
    }
    if (normalize && total > 0) w.row(static_cast<Eigen::Index>(d)) /= total;
  }
  return w;
}

// ---------------------------------------------------------------- joint objective

template <typename S>
LossTerms<S> joint_loss(Tape<S>& t, Model<S>& m, const Mat<S>& W, const Batch<S>& batch, NoiseSource<S>& noise,
                        LossScales scales) {
  const ModelConfig& c = m.cfg;
  const auto B = static_cast<Eigen::Index>(batch.docs.size());
  if (B == 0) throw DimensionError("joint_loss: empty batch");
  require_dims(batch.rows.size() == batch.docs.size(), "joint_loss: rows/docs size mismatch");
  Mat<S> target(B, 1);
  for (Eigen::Index b = 0; b < B; ++b) target(b, 0) = static_cast<S>(batch.docs[b]->rating);
  Var<S> y = t.constant(target);
  Var<S> zero = t.constant(Mat<S>::Zero(1, 1));

  LossTerms<S> out;
  if (c.kind == ModelKind::Mlp) {
    Var<S> rep = activate(mlp_apply(t, m.att.bow_encoder, t.constant(bow_matrix<S>(batch.docs, c.V, true))), c.activation);
    out.r_hat = rating_head(t, m, rep);
    out.reg = rmse(out.r_hat, y);
    out.recon = out.kl_local = out.kl_global = zero;
    out.loss = scale(out.reg, static_cast<S>(c.alpha_y));
    return out;
  }

  ChainPass<S> eta = encode_global(t, m, W, noise);
  for (int r : batch.rows)
    if (r < 0 || r >= W.rows()) throw DimensionError("joint_loss: chain row out of range");
  Var<S> eta_rows = gather_rows(eta.z, batch.rows);
  LocalPass<S> local = encode_local(t, m, t.constant(bow_matrix<S>(batch.docs, c.V, true)), eta_rows, noise);
  Var<S> theta = decode(t, m, local.zeta);
  Var<S> beta = topic_word(t, m);
  out.recon = sum(cmul(t.constant(bow_matrix<S>(batch.docs, c.V, false)), log_floor(matmul(theta, beta), S(1e-12))));
  out.kl_local = local.kl;
  out.kl_global = eta.kl;

  if (!scales.regression) {
    if (m.trend) out.kl_global = add(out.kl_global, encode_xi(t, m, W, noise).kl);
    out.reg = zero;
    out.loss = topic_model_loss(out, scales);
    return out;
  }
  if (c.kind == ModelKind::Dst) {
    out.r_hat = rating_head(t, m, local.zeta);
  } else {
    std::vector<const std::vector<int>*> seqs;
    for (const auto* d : batch.docs) seqs.push_back(&d->lm_ids);
    WordBatch wb = pack_words(seqs);
    Var<S> U = encode_words(t, m, wb);
    Var<S> s;
    if (m.trend) {
      ChainPass<S> xi = encode_xi(t, m, W, noise);
      out.kl_global = add(out.kl_global, xi.kl);
      s = trendy_pool(t, m, U, theta, gather_rows(xi.z, batch.rows), wb);
    } else {
      s = topic_pool(t, m, U, theta, wb);
    }
    out.r_hat = rating_head(t, m, s);
  }
  out.reg = rmse(out.r_hat, y);
  out.loss = add(topic_model_loss(out, scales), scale(out.reg, static_cast<S>(c.alpha_y)));
  for (auto [name, v] : {std::pair{"reconstruction", out.recon}, std::pair{"local KL", out.kl_local},
                         std::pair{"global KL", out.kl_global}, std::pair{"regression", out.reg}})
    if (!std::isfinite(static_cast<double>(v.scalar()))) throw NumericError(std::string("non-finite ") + name + " term");
  return out;
}

// ---------------------------------------------------------------- readouts

template <typename S>
Vec<S> readout(Model<S>& m, const Mat<S>& eta_rows, const Mat<S>* xi_rows, const std::vector<const Document*>& docs,
               ZetaSource src, NoiseSource<S>& noise) {
  const ModelConfig& c = m.cfg;
  const auto n = static_cast<Eigen::Index>(docs.size());
  Vec<S> out(n);
  constexpr Eigen::Index kChunk = 256;
  for (Eigen::Index lo = 0; lo < n; lo += kChunk) {
    const Eigen::Index cnt = std::min(kChunk, n - lo);
    std::vector<const Document*> part(docs.begin() + lo, docs.begin() + lo + cnt);
    Tape<S> t;
    Var<S> r;
    if (c.kind == ModelKind::Mlp) {
      Var<S> rep = activate(mlp_apply(t, m.att.bow_encoder, t.constant(bow_matrix<S>(part, c.V, true))), c.activation);
      r = rating_head(t, m, rep);
    } else {
      require_dims(eta_rows.rows() == n, "readout: eta rows / docs mismatch");
      Var<S> eta = t.constant(eta_rows.middleRows(lo, cnt));
      Var<S> zeta;
      if (src == ZetaSource::Posterior) {
        zeta = encode_local(t, m, t.constant(bow_matrix<S>(part, c.V, true)), eta, noise).zeta;
      } else {
        Var<S> mu = zeta_prior_mean(t, m, eta);
        zeta = add(mu, t.constant(noise.normal(mu.rows(), mu.cols())));
      }
      if (c.kind == ModelKind::Dst) {
        r = rating_head(t, m, zeta);
      } else {
        Var<S> theta = decode(t, m, zeta);
        std::vector<const std::vector<int>*> seqs;
        for (const auto* d : part) seqs.push_back(&d->lm_ids);
        WordBatch wb = pack_words(seqs);
        Var<S> U = encode_words(t, m, wb);
        Var<S> s;
        if (m.trend) {
          if (!xi_rows) throw UsageError("readout: trend model needs xi rows");
          s = trendy_pool(t, m, U, theta, t.constant(xi_rows->middleRows(lo, cnt)), wb);
        } else {
          s = topic_pool(t, m, U, theta, wb);
        }
        r = rating_head(t, m, s);
      }
    }
    out.segment(lo, cnt) = r.value().col(0);
  }
  return out;
}

template <typename S>
Vec<S> predict_in_window(Model<S>& m, const Mat<S>& W, const std::vector<const Document*>& docs,
                         const std::vector<int>& rows) {
  ZeroNoise<S> zn;
  const auto n = static_cast<Eigen::Index>(docs.size());
  Mat<S> eta_rows, xi_rows;
  if (m.cfg.has_topic_model()) {
    Tape<S> t;
    Mat<S> eta = encode_global(t, m, W, zn).z.value();
    eta_rows.resize(n, eta.cols());
    for (Eigen::Index i = 0; i < n; ++i) eta_rows.row(i) = eta.row(rows[i]);
    if (m.trend) {
      Mat<S> xi = encode_xi(t, m, W, zn).z.value();
      xi_rows.resize(n, xi.cols());
      for (Eigen::Index i = 0; i < n; ++i) xi_rows.row(i) = xi.row(rows[i]);
    }
  }
  return readout(m, eta_rows, m.trend ? &xi_rows : nullptr, docs, ZetaSource::Posterior, zn);
}

// ---------------------------------------------------------------- checkpoints

template <typename S>
void save_checkpoint(const std::filesystem::path& dir, Model<S>& m, const Vocabulary* tm, const Vocabulary* lm,
                     std::map<std::string, std::string> meta) {
  TensorBlob blob;
  for (auto& [k, v] : meta) blob.meta["info." + k] = v;
  blob.meta["checkpoint_version"] = std::to_string(kCheckpointVersion);
  blob.meta["scalar"] = sizeof(S) == sizeof(double) ? "f64" : "f32";
  for (auto& [k, v] : m.cfg.to_map()) blob.meta["model." + k] = v;
  if (tm) blob.meta["vocab_tm_hash"] = hex64(tm->hash());
  if (lm) blob.meta["vocab_lm_hash"] = hex64(lm->hash());
  m.visit([&blob](const std::string& name, Param<S>& p) { blob.add(name, p.value); });
  write_blob(dir, blob);
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& dir) {
  TensorBlob blob = read_blob(dir);
  auto ver = blob.meta.find("checkpoint_version");
  if (ver == blob.meta.end() || ver->second != std::to_string(kCheckpointVersion))
    throw CorruptionError("checkpoint: missing or unsupported checkpoint_version");
  KeyValues kv;
  kv.values = blob.meta;
  ModelConfig cfg = ModelConfig::from_map(kv.section("model"));
  Checkpoint<S> ck{Model<S>::init(cfg, 0), blob.meta};
  std::size_t matched = 0;
  ck.model.visit([&](const std::string& name, Param<S>& p) {
    const TensorRecord* rec = blob.find(name);
    if (!rec) throw CorruptionError("checkpoint: missing tensor " + name);
    if (rec->rows() != p.rows() || rec->cols() != p.cols()) throw CorruptionError("checkpoint: shape mismatch for " + name);
    std::visit([&p](const auto& mat) { p.value = mat.template cast<S>(); }, rec->data);
    p.zero_grad();
    ++matched;
  });
  if (matched != blob.tensors.size()) throw CorruptionError("checkpoint: unexpected extra tensors");
  return ck;
}

void check_checkpoint_vocab(const std::map<std::string, std::string>& meta, const Vocabulary& tm, const Vocabulary& lm) {
  auto check = [&meta](const char* key, const Vocabulary& v, const char* what) {
    auto it = meta.find(key);
    if (it != meta.end() && it->second != hex64(v.hash()))
      throw DataError(std::string("checkpoint was trained with a different ") + what + " vocabulary (hash " + it->second +
                      ", have " + hex64(v.hash()) + ")");
  };
  check("vocab_tm_hash", tm, "topic-model");
  check("vocab_lm_hash", lm, "LM");
}

// ---------------------------------------------------------------- instantiations

#define DTAM_INSTANTIATE(S)                                                                                              \
  template struct Model<S>;                                                                                             \
  template ChainPass<S> encode_global(Tape<S>&, Model<S>&, const Mat<S>&, NoiseSource<S>&);                             \
  template ChainPass<S> encode_xi(Tape<S>&, Model<S>&, const Mat<S>&, NoiseSource<S>&);                                 \
  template LocalPass<S> encode_local(Tape<S>&, Model<S>&, Var<S>, Var<S>, NoiseSource<S>&);                             \
  template Var<S> zeta_prior_mean(Tape<S>&, Model<S>&, Var<S>);                                                         \
  template Var<S> topic_word(Tape<S>&, Model<S>&);                                                                      \
  template Var<S> decode(Tape<S>&, Model<S>&, Var<S>);                                                                  \
  template Var<S> encode_words(Tape<S>&, Model<S>&, const WordBatch&);                                                  \
  template Var<S> topic_pool(Tape<S>&, Model<S>&, Var<S>, Var<S>, const WordBatch&);                                    \
  template Var<S> dynamic_alpha(Tape<S>&, Model<S>&, Var<S>);                                                           \
  template Var<S> trendy_pool(Tape<S>&, Model<S>&, Var<S>, Var<S>, Var<S>, const WordBatch&);                           \
  template Var<S> trendy_pool_fixed(Tape<S>&, Model<S>&, Var<S>, Var<S>, Var<S>, const WordBatch&);                     \
  template Var<S> rating_head(Tape<S>&, Model<S>&, Var<S>);                                                             \
  template Var<S> rmse(Var<S>, Var<S>);                                                                                 \
  template Mat<S> bow_matrix<S>(const std::vector<const Document*>&, int, bool);                                        \
  template LossTerms<S> joint_loss(Tape<S>&, Model<S>&, const Mat<S>&, const Batch<S>&, NoiseSource<S>&, LossScales);   \
  template Vec<S> readout(Model<S>&, const Mat<S>&, const Mat<S>*, const std::vector<const Document*>&, ZetaSource,     \
                          NoiseSource<S>&);                                                                             \
  template Vec<S> predict_in_window(Model<S>&, const Mat<S>&, const std::vector<const Document*>&,                      \
                                    const std::vector<int>&);                                                           \
  template void save_checkpoint(const std::filesystem::path&, Model<S>&, const Vocabulary*, const Vocabulary*,          \
                                std::map<std::string, std::string>);                                                    \
  template Checkpoint<S> load_checkpoint(const std::filesystem::path&);

DTAM_INSTANTIATE(float)
DTAM_INSTANTIATE(double)

#undef DTAM_INSTANTIATE

}  // namespace dtam
