#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dtam/dtm.hpp"
#include "test_util.hpp"

using namespace dtam;
using namespace dtam::testing;

namespace {

MatXd random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  MatXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void zero_all(Model<double>& m) {
  m.visit([](const std::string&, Param<double>& p) { p.value.setZero(); });
}

}  // namespace

// ---------------------------------------------------------------- topic_word_matrix

TEST(TopicWord, ZeroEmbeddingsUniform) {
  MatXd beta = topic_word_matrix<double>(MatXd::Zero(1, 3), MatXd::Zero(5, 3));
  for (int v = 0; v < 5; ++v) EXPECT_DOUBLE_EQ(beta(0, v), 0.2);
}

TEST(TopicWord, OrthogonalRowUniform) {
  MatXd alpha(1, 2), rho(3, 2);
  alpha << 1, 0;
  rho << 0, 1, 0, -2, 0, 5;
  MatXd beta = topic_word_matrix<double>(alpha, rho);
  for (int v = 0; v < 3; ++v) EXPECT_NEAR(beta(0, v), 1.0 / 3.0, 1e-15);
}

TEST(TopicWord, MatchesDirectOracle) {
  std::mt19937_64 rng(1);
  MatXd alpha = random_mat(2, 4, rng), rho = random_mat(3, 4, rng);
  MatXd beta = topic_word_matrix<double>(alpha, rho);
  for (int k = 0; k < 2; ++k) {
    double z = 0;
    for (int v = 0; v < 3; ++v) z += std::exp(alpha.row(k).dot(rho.row(v)));
    for (int v = 0; v < 3; ++v) EXPECT_NEAR(beta(k, v), std::exp(alpha.row(k).dot(rho.row(v))) / z, 1e-12);
    EXPECT_NEAR(beta.row(k).sum(), 1.0, 1e-12);
  }
}

TEST(TopicWord, DimensionMismatch) {
  EXPECT_THROW(topic_word_matrix<double>(MatXd::Zero(2, 3), MatXd::Zero(4, 2)), DimensionError);
}

// ---------------------------------------------------------------- eta_prior_step

TEST(EtaPrior, FirstStepStandardNormal) {
  GenerativeParams<double> g;
  g.eta_transition = MlpParams<double>::zeros({2, 2}, Activation::Identity);
  auto p = eta_prior_step<double>(VecXd(), g);
  EXPECT_EQ(p.mean, VecXd::Zero(2));
  EXPECT_EQ(p.stddev, VecXd::Ones(2));
}

TEST(EtaPrior, IdentityTransitionStddevConvention) {
  GenerativeParams<double> g;
  g.eta_transition = MlpParams<double>::zeros({1, 1}, Activation::Identity);
  g.eta_transition.weights[0].value(0, 0) = 1.0;
  g.delta_tr = 0.1;
  VecXd eta(1);
  eta << 2.0;
  auto p = eta_prior_step<double>(eta, g);
  EXPECT_DOUBLE_EQ(p.mean(0), 2.0);
  EXPECT_NEAR(p.stddev(0), 0.1, 1e-15);
  g.delta_is_variance = true;
  EXPECT_NEAR(eta_prior_step<double>(eta, g).stddev(0), std::sqrt(0.1), 1e-15);
}

TEST(EtaPrior, ZeroTransitionIgnoresEta) {
  GenerativeParams<double> g;
  g.eta_transition = MlpParams<double>::zeros({3, 4, 3});
  g.delta_tr = 0.2;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 5; ++i) {
    auto p = eta_prior_step<double>(random_mat(3, 1, rng).col(0), g);
    EXPECT_EQ(p.mean, VecXd::Zero(3));
    EXPECT_NEAR(p.stddev(1), 0.2, 1e-15);
  }
}

// ---------------------------------------------------------------- zeta_prior

TEST(ZetaPrior, ZeroAffine) {
  GenerativeParams<double> g;
  g.zeta_w = Param<double>(MatXd::Zero(2, 3));
  g.zeta_c = Param<double>(MatXd::Zero(1, 3));
  auto p = zeta_prior<double>(VecXd::Ones(2), g);
  EXPECT_EQ(p.mean, VecXd::Zero(3));
  EXPECT_EQ(p.stddev, VecXd::Ones(3));
}

TEST(ZetaPrior, IdentityAffine) {
  GenerativeParams<double> g;
  g.zeta_w = Param<double>(MatXd::Identity(2, 2));
  g.zeta_c = Param<double>(MatXd::Zero(1, 2));
  VecXd eta(2);
  eta << 1, -1;
  EXPECT_EQ(zeta_prior<double>(eta, g).mean, eta);
}

TEST(ZetaPrior, MatchesMatrixVectorOracle) {
  std::mt19937_64 rng(3);
  GenerativeParams<double> g;
  g.zeta_w = Param<double>(random_mat(3, 2, rng));
  g.zeta_c = Param<double>(random_mat(1, 2, rng));
  VecXd eta = random_mat(3, 1, rng).col(0);
  auto p = zeta_prior<double>(eta, g);
  for (int j = 0; j < 2; ++j) {
    double acc = g.zeta_c.value(0, j);
    for (int i = 0; i < 3; ++i) acc += g.zeta_w.value(i, j) * eta(i);
    EXPECT_NEAR(p.mean(j), acc, 1e-14);
  }
}

// ---------------------------------------------------------------- decode_theta

TEST(DecodeTheta, ZeroDecoderUniform) {
  GenerativeParams<double> g;
  g.theta_decoder = MlpParams<double>::zeros({2, 4});
  VecXd th = decode_theta<double>(VecXd::Ones(2), g);
  for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(th(k), 0.25);
}

TEST(DecodeTheta, LogitsLn2Ln1) {
  GenerativeParams<double> g;
  g.theta_decoder = MlpParams<double>::zeros({1, 2});
  g.theta_decoder.biases[0].value << std::log(2.0), std::log(1.0);
  VecXd th = decode_theta<double>(VecXd::Zero(1), g);
  EXPECT_NEAR(th(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(th(1), 1.0 / 3.0, 1e-15);
}

TEST(DecodeTheta, SumsToOne) {
  std::mt19937_64 rng(4);
  GenerativeParams<double> g;
  g.theta_decoder = MlpParams<double>::init({3, 6, 5}, Activation::Relu, 0.0, rng);
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(decode_theta<double>(random_mat(3, 1, rng, 3.0).col(0), g).sum(), 1.0, 1e-12);
}

// ---------------------------------------------------------------- bow_log_likelihood

TEST(BowLikelihood, SingleTopicCollapses) {
  std::mt19937_64 rng(5);
  MatXd beta = softmax<double>(random_mat(1, 4, rng));
  VecXd w(4);
  w << 2, 0, 1, 3;
  double expect = 0;
  for (int v = 0; v < 4; ++v) expect += w(v) * std::log(beta(0, v));
  EXPECT_NEAR(bow_log_likelihood<double>(w, VecXd::Ones(1), beta), expect, 1e-12);
}

TEST(BowLikelihood, UniformModel) {
  const int V = 7;
  MatXd beta = MatXd::Constant(3, V, 1.0 / V);
  VecXd w = VecXd::Zero(V);
  w(1) = 4;
  w(5) = 2;
  EXPECT_NEAR(bow_log_likelihood<double>(w, VecXd::Constant(3, 1.0 / 3), beta), 6 * std::log(1.0 / V), 1e-12);
}

TEST(BowLikelihood, OneTokenEnumeration) {
  std::mt19937_64 rng(6);
  MatXd beta = softmax<double>(random_mat(2, 3, rng));
  VecXd theta = softmax<double>(VecXd(random_mat(2, 1, rng).col(0)));
  for (int tok = 0; tok < 3; ++tok) {
    VecXd w = VecXd::Zero(3);
    w(tok) = 1;
    const double p = theta(0) * beta(0, tok) + theta(1) * beta(1, tok);
    EXPECT_NEAR(bow_log_likelihood<double>(w, theta, beta), std::log(p), 1e-12);
  }
}

TEST(BowLikelihood, NegativeCountsRejected) {
  VecXd w(2);
  w << 1, -1;
  EXPECT_THROW(bow_log_likelihood<double>(w, VecXd::Ones(1), MatXd::Constant(1, 2, 0.5)), DomainError);
}

TEST(BowLikelihood, SparseMatchesDense) {
  std::mt19937_64 rng(7);
  MatXd beta = softmax<double>(random_mat(3, 6, rng));
  VecXd theta = softmax<double>(VecXd(random_mat(3, 1, rng).col(0)));
  Bow b{{0, 2}, {3, 1}, {5, 4}};
  VecXd w = VecXd::Zero(6);
  for (auto [v, c] : b) w(v) = c;
  EXPECT_NEAR(bow_log_likelihood<double>(b, theta, beta), bow_log_likelihood<double>(w, theta, beta), 1e-12);
}

TEST(BowLikelihood, FloorsZeroProbability) {
  MatXd beta(1, 2);
  beta << 1.0, 0.0;
  VecXd w(2);
  w << 0, 1;
  EXPECT_NEAR(bow_log_likelihood<double>(w, VecXd::Ones(1), beta), std::log(1e-12), 1e-9);
}

// ---------------------------------------------------------------- encode_global

TEST(EncodeGlobal, ZeroNetworksZeroNoise) {
  auto m = Model<double>::init(tiny_config(ModelKind::DTam, 2, 5), 1);
  zero_all(m);
  ZeroNoise<double> zn;
  auto tr = encode_global(m, MatXd::Constant(1, 5, 0.2), zn);
  EXPECT_EQ(tr.eta, MatXd::Zero(1, 3));
}

TEST(EncodeGlobal, DeterministicGivenNoise) {
  auto m = Model<double>::init(tiny_config(ModelKind::DTam, 2, 5), 2);
  std::mt19937_64 rng(8);
  MatXd W = softmax<double>(random_mat(3, 5, rng));
  ZeroNoise<double> zn;
  EXPECT_EQ(encode_global(m, W, zn).eta, encode_global(m, W, zn).eta);
  GaussianNoise<double> a(5), b(5);
  EXPECT_EQ(encode_global(m, W, a).eta, encode_global(m, W, b).eta);
}

TEST(EncodeGlobal, ShapeAndPositiveStddev) {
  auto m = Model<double>::init(tiny_config(ModelKind::DTam, 2, 5), 3);
  std::mt19937_64 rng(9);
  GaussianNoise<double> noise(1);
  auto tr = encode_global(m, softmax<double>(random_mat(3, 5, rng)), noise);
  EXPECT_EQ(tr.eta.rows(), 3);
  EXPECT_EQ(tr.eta.cols(), 3);
  EXPECT_EQ(tr.h.rows(), 3);
  ASSERT_EQ(tr.posteriors.size(), 3u);
  for (const auto& p : tr.posteriors) EXPECT_TRUE((p.stddev.array() > 0).all());
}

TEST(EncodeGlobal, EmptyTimelineRejected) {
  auto m = Model<double>::init(tiny_config(ModelKind::DTam, 2, 5), 3);
  ZeroNoise<double> zn;
  EXPECT_THROW(encode_global(m, MatXd(0, 5), zn), DataError);
}

TEST(EncodeGlobal, FinalVersusPerStepConditioning) {
  auto cfg = tiny_config(ModelKind::DTam, 2, 5);
  auto m = Model<double>::init(cfg, 4);
  std::mt19937_64 rng(10);
  MatXd W = softmax<double>(random_mat(3, 5, rng));
  ZeroNoise<double> zn;
  MatXd final_h = encode_global(m, W, zn).eta;
  m.cfg.per_step_global = true;
  MatXd per_step = encode_global(m, W, zn).eta;
  // The last step sees h_T either way.
  EXPECT_FALSE(final_h.row(0).isApprox(per_step.row(0)));
  EXPECT_EQ(W.rows(), per_step.rows());
}

// ---------------------------------------------------------------- encode_local

TEST(EncodeLocal, ZeroNetworksZeroNoise) {
  auto m = Model<double>::init(tiny_config(ModelKind::DTam, 2, 5), 1);
  zero_all(m);
  ZeroNoise<double> zn;
  auto [q, z] = encode_local(m, VecXd::Ones(5), VecXd::Ones(3), zn);
  EXPECT_EQ(z, VecXd::Zero(3));
  EXPECT_EQ(q.stddev, VecXd::Ones(3));
}

TEST(EncodeLocal, DeterministicAndPositive) {
  auto m = Model<double>::init(tiny_config(ModelKind::DTam, 2, 5), 5);
  std::mt19937_64 rng(11);
  for (int i = 0; i < 10; ++i) {
    VecXd w = random_mat(5, 1, rng).col(0).cwiseAbs();
    VecXd eta = random_mat(3, 1, rng).col(0);
    GaussianNoise<double> a(i), b(i);
    auto [qa, za] = encode_local(m, w, eta, a);
    auto [qb, zb] = encode_local(m, w, eta, b);
    EXPECT_EQ(za, zb);
    EXPECT_TRUE((qa.stddev.array() > 0).all());
  }
}

// ---------------------------------------------------------------- elbo

TEST(Elbo, PosteriorEqualsPriorGivesZeroKl) {
  auto cfg = tiny_config(ModelKind::DTam, 2, 6);
  cfg.delta_tr = 1.0;  // transition prior N(0, I) under zero networks
  auto m = Model<double>::init(cfg, 6);
  // Inference and transition networks reproduce the priors exactly.
  auto zero = [](MlpParams<double>& p) {
    for (auto& w : p.weights) w.value.setZero();
    for (auto& b : p.biases) b.value.setZero();
  };
  zero(m.inf.local_mean);
  zero(m.inf.local_logstd);
  zero(m.inf.global_mean);
  zero(m.inf.global_logstd);
  zero(m.gen.eta_transition);
  m.gen.zeta_w.value.setZero();
  m.gen.zeta_c.value.setZero();
  std::mt19937_64 rng(12);
  auto docs = random_docs(3, 2, 6, 12, rng);
  GaussianNoise<double> noise(3);
  auto e = elbo(m, slice_matrix(docs, 3, 6), batch_of(docs), noise);
  EXPECT_NEAR(e.kl_local, 0.0, 1e-12);
  EXPECT_NEAR(e.kl_global, 0.0, 1e-12);
  EXPECT_NEAR(e.loss, -e.recon, 1e-12);
}

TEST(Elbo, SingleTopicReconMatchesLikelihood) {
  auto m = Model<double>::init(tiny_config(ModelKind::DTam, 1, 5), 7);
  std::mt19937_64 rng(13);
  auto docs = random_docs(1, 1, 5, 12, rng);
  GaussianNoise<double> noise(4);
  auto e = elbo(m, slice_matrix(docs, 1, 5), batch_of(docs), noise);
  MatXd beta = topic_word_matrix(m.gen);
  EXPECT_NEAR(e.recon, bow_log_likelihood<double>(docs[0].bow, VecXd::Ones(1), beta), 1e-12);
}

TEST(Elbo, ToyGradientMatchesFiniteDifferences) {
  auto m = Model<double>::init(tiny_config(ModelKind::DTam, 2, 4), 8);
  std::mt19937_64 rng(14);
  auto docs = random_docs(2, 1, 4, 12, rng);
  MatXd W = slice_matrix(docs, 2, 4);
  auto batch = batch_of(docs);
  GaussianNoise<double> draw(9);
  MatXd eps = draw.normal(64, 8);
  auto f = [&](Tape<double>& t) {
    struct Replay : NoiseSource<double> {
      const MatXd* src;
      Eigen::Index row = 0;
      MatXd normal(Eigen::Index r, Eigen::Index c) override {
        MatXd out = src->block(row, 0, r, c);
        row += r;
        return out;
      }
    } replay;
    replay.src = &eps;
    LossScales sc;
    sc.regression = false;
    return joint_loss(t, m, W, batch, replay, sc).loss;
  };
  // Only the topic-model parameters influence this loss.
  NamedParams<double> params;
  for (auto& [n, p] : m.named())
    if (n.rfind("gen.", 0) == 0 || n.rfind("inf.", 0) == 0) params.emplace_back(n, p);
  auto rep = grad_check<double>(f, params, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.worst_entry << " rel " << rep.max_rel_error;
}

TEST(Elbo, DeterministicGivenNoise) {
  auto m = Model<double>::init(tiny_config(ModelKind::DTam, 2, 6), 9);
  std::mt19937_64 rng(15);
  auto docs = random_docs(3, 2, 6, 12, rng);
  MatXd W = slice_matrix(docs, 3, 6);
  GaussianNoise<double> a(7), b(7);
  EXPECT_EQ(elbo(m, W, batch_of(docs), a).loss, elbo(m, W, batch_of(docs), b).loss);
}

// -loss <= log p(w), estimated by importance sampling from the prior.
TEST(Elbo, IsALowerBound) {
  auto cfg = tiny_config(ModelKind::DTam, 2, 4);
  cfg.eta_dim = 2;
  cfg.zeta_dim = 2;
  auto m = Model<double>::init(cfg, 10);
  std::mt19937_64 rng(16);
  auto docs = random_docs(1, 1, 4, 12, rng, 5, 5);
  MatXd W = slice_matrix(docs, 1, 4);

  const int n_elbo = 2000;
  GaussianNoise<double> noise(11);
  double s = 0, s2 = 0;
  for (int i = 0; i < n_elbo; ++i) {
    const double v = -elbo(m, W, batch_of(docs), noise).loss;
    s += v;
    s2 += v * v;
  }
  const double elbo_mean = s / n_elbo;
  const double elbo_se = std::sqrt((s2 / n_elbo - elbo_mean * elbo_mean) / n_elbo);

  const int n = 100000;
  GaussianNoise<double> prior(12);
  MatXd eta = prior.normal(n, 2);
  MatXd zeta = (eta * m.gen.zeta_w.value).rowwise() + m.gen.zeta_c.value.row(0);
  zeta += prior.normal(n, 2);
  MatXd theta = softmax<double>(mlp_apply<double>(m.gen.theta_decoder, zeta));
  MatXd beta = topic_word_matrix(m.gen);
  VecXd ll(n);
  for (int i = 0; i < n; ++i) ll(i) = bow_log_likelihood<double>(docs[0].bow, VecXd(theta.row(i).transpose()), beta);
  const double mx = ll.maxCoeff();
  VecXd p = (ll.array() - mx).exp();
  const double pm = p.mean();
  const double log_evidence = mx + std::log(pm);
  const double p_sd = std::sqrt((p.array() - pm).square().sum() / (n - 1));
  const double is_se = p_sd / (pm * std::sqrt(static_cast<double>(n)));
  EXPECT_LE(elbo_mean, log_evidence + 3.0 * std::hypot(elbo_se, is_se))
      << "elbo " << elbo_mean << " log p " << log_evidence;
}

// ---------------------------------------------------------------- top_words

TEST(TopWords, Descending) {
  MatXd beta(1, 3);
  beta << 0.5, 0.3, 0.2;
  auto top = top_words<double>(beta, 2);
  EXPECT_EQ(top[0], (std::vector<int>{0, 1}));
}

TEST(TopWords, TiesLexicographic) {
  Vocabulary v({"pear", "apple", "fig"}, {1, 1, 1});
  auto top = top_words<double>(MatXd::Constant(1, 3, 1.0 / 3), 3, &v);
  EXPECT_EQ(top[0], (std::vector<int>{1, 2, 0}));
}

TEST(TopWords, ClipsAndPermutes) {
  std::mt19937_64 rng(17);
  MatXd beta = softmax<double>(random_mat(2, 6, rng));
  auto top = top_words<double>(beta, 99);
  for (auto ids : top) {
    ASSERT_EQ(ids.size(), 6u);
    std::sort(ids.begin(), ids.end());
    for (int i = 0; i < 6; ++i) EXPECT_EQ(ids[i], i);
  }
}

// ---------------------------------------------------------------- trend extension

TEST(XiTrajectory, DisabledFlagRejected) {
  auto m = Model<double>::init(tiny_config(ModelKind::DTam, 2, 5), 1);
  ZeroNoise<double> zn;
  EXPECT_THROW(xi_trajectory(m, MatXd::Constant(2, 5, 0.2), zn), UsageError);
}

TEST(XiTrajectory, ZeroNetworksZeroNoise) {
  auto cfg = tiny_config(ModelKind::DTam, 2, 5);
  cfg.trend = true;
  auto m = Model<double>::init(cfg, 1);
  zero_all(m);
  ZeroNoise<double> zn;
  EXPECT_EQ(xi_trajectory(m, MatXd::Constant(3, 5, 0.2), zn).eta, MatXd::Zero(3, 2));
}

TEST(XiTrajectory, PositiveStddevAndShape) {
  auto cfg = tiny_config(ModelKind::DTam, 2, 5);
  cfg.trend = true;
  auto m = Model<double>::init(cfg, 2);
  std::mt19937_64 rng(18);
  GaussianNoise<double> noise(3);
  auto tr = xi_trajectory(m, softmax<double>(random_mat(4, 5, rng)), noise);
  EXPECT_EQ(tr.eta.rows(), 4);
  for (const auto& p : tr.posteriors) EXPECT_TRUE((p.stddev.array() > 0).all());
}

TEST(DynamicAlpha, ZeroQueryGivesValueProjection) {
  auto cfg = tiny_config(ModelKind::DTam, 3, 5);
  cfg.trend = true;
  auto m = Model<double>::init(cfg, 3);
  m.trend->ma_q.value.setZero();
  std::mt19937_64 rng(19);
  MatXd a = dynamic_topic_embeddings<double>(m, random_mat(2, 1, rng).col(0));
  EXPECT_TRUE(a.isApprox(m.gen.alpha.value * m.trend->ma_v.value, 1e-14));
}

TEST(DynamicAlpha, IdentityValueZeroGate) {
  auto cfg = tiny_config(ModelKind::DTam, 3, 5);
  cfg.trend = true;
  auto m = Model<double>::init(cfg, 4);
  m.trend->ma_v.value.setIdentity();
  m.trend->ma_k.value.setZero();
  MatXd a = dynamic_topic_embeddings<double>(m, VecXd::Ones(2));
  EXPECT_TRUE(a.isApprox(m.gen.alpha.value, 1e-14));
}

TEST(DynamicAlpha, ScalarOracle) {
  auto cfg = tiny_config(ModelKind::DTam, 2, 5);
  cfg.trend = true;
  auto m = Model<double>::init(cfg, 5);
  VecXd xi(2);
  xi << 0.3, -0.7;
  MatXd a = dynamic_topic_embeddings<double>(m, xi);
  const auto& tr = *m.trend;
  const int E = cfg.E;
  for (int i = 0; i < 2; ++i) {
    double dot = 0;
    for (int e = 0; e < E; ++e) {
      double q = 0, k = 0;
      for (int r = 0; r < 2; ++r) q += xi(r) * tr.ma_q.value(r, e);
      for (int r = 0; r < E; ++r) k += m.gen.alpha.value(i, r) * tr.ma_k.value(r, e);
      dot += q * k;
    }
    const double gate = std::exp(dot / std::sqrt(double(E)));
    for (int e = 0; e < E; ++e) {
      double v = 0;
      for (int r = 0; r < E; ++r) v += m.gen.alpha.value(i, r) * tr.ma_v.value(r, e);
      EXPECT_NEAR(a(i, e), gate * v, 1e-12);
    }
  }
}

TEST(DynamicAlpha, OverflowSuggestsClamp) {
  auto cfg = tiny_config(ModelKind::DTam, 2, 5);
  cfg.trend = true;
  auto m = Model<double>::init(cfg, 6);
  m.trend->ma_q.value.setConstant(1e3);
  m.trend->ma_k.value.setConstant(1e3);
  m.gen.alpha.value.setConstant(1.0);
  EXPECT_THROW(dynamic_topic_embeddings<double>(m, VecXd::Ones(2)), NumericError);
  m.trend->gate_clamp = true;
  MatXd a = dynamic_topic_embeddings<double>(m, VecXd::Ones(2));
  EXPECT_TRUE(a.allFinite());
  EXPECT_TRUE(a.isApprox(std::exp(20.0) * (m.gen.alpha.value * m.trend->ma_v.value)));
}
