#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dtam/forecast.hpp"
#include "test_util.hpp"

using namespace dtam;
using namespace dtam::testing;

namespace {

MlpParams<double> identity_mlp(int d) {
  auto p = MlpParams<double>::zeros({d, d}, Activation::Identity);
  p.weights[0].value = MatXd::Identity(d, d);
  return p;
}

struct Fixture {
  int V = 8, T = 3;
  std::vector<Document> history, future;
  MatXd W;
  Model<double> m;
  explicit Fixture(ModelKind kind = ModelKind::DTam, bool trend = false) {
    std::mt19937_64 rng(4);
    history = random_docs(T, 4, V, 12, rng);
    W = slice_matrix(history, T, V);
    future = random_docs(T + 2, 2, V, 12, rng);
    future.erase(future.begin(), future.begin() + 2 * T);  // slices T and T+1
    auto c = tiny_config(kind, 3, V);
    c.trend = trend;
    m = Model<double>::init(c, 8);
  }
};

}  // namespace

TEST(Rollout, IdentityTransitionZeroNoiseCopies) {
  GenerativeParams<double> gen;
  gen.eta_transition = identity_mlp(3);
  gen.delta_tr = 0.0;
  VecXd eta(3);
  eta << 0.3, -1.2, 2.0;
  GaussianNoise<double> noise(1);
  for (RolloutMode mode : {RolloutMode::Mean, RolloutMode::Sampled}) {
    MatXd out = rollout_eta<double>(eta, 3, gen, mode, noise);
    ASSERT_EQ(out.rows(), 3);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(VecXd(out.row(i).transpose()), eta);
  }
}

TEST(Rollout, MeanModeDeterministicAndRecursive) {
  Fixture f;
  VecXd eta(3);
  eta << 0.1, 0.2, -0.3;
  GaussianNoise<double> noise(2);
  MatXd a = rollout_eta<double>(eta, 4, f.m.gen, RolloutMode::Mean, noise);
  MatXd b = rollout_eta<double>(eta, 4, f.m.gen, RolloutMode::Mean, noise);
  EXPECT_EQ(a, b);
  // Multi-step horizons are the single-step map applied recursively.
  VecXd cur = eta;
  for (int i = 0; i < 4; ++i) {
    cur = rollout_eta<double>(cur, 1, f.m.gen, RolloutMode::Mean, noise).row(0).transpose();
    EXPECT_TRUE(cur.isApprox(VecXd(a.row(i).transpose()), 1e-14));
  }
}

TEST(Rollout, SampledWithZeroNoiseEqualsMean) {
  Fixture f;
  VecXd eta = VecXd::Constant(3, 0.4);
  ZeroNoise<double> zero;
  EXPECT_EQ(rollout_eta<double>(eta, 3, f.m.gen, RolloutMode::Sampled, zero),
            rollout_eta<double>(eta, 3, f.m.gen, RolloutMode::Mean, zero));
}

TEST(Rollout, SampledNoiseScale) {
  // Zero transition: each step is delta_tr * noise.
  GenerativeParams<double> gen;
  gen.eta_transition = MlpParams<double>::zeros({2, 2}, Activation::Identity);
  gen.delta_tr = 0.25;
  GaussianNoise<double> noise(3);
  MatXd out = rollout_eta<double>(VecXd::Zero(2), 20000, gen, RolloutMode::Sampled, noise);
  const double sd = std::sqrt((out.array() - out.mean()).square().mean());
  EXPECT_NEAR(sd, 0.25, 0.01);
  gen.delta_is_variance = true;
  out = rollout_eta<double>(VecXd::Zero(2), 20000, gen, RolloutMode::Sampled, noise);
  EXPECT_NEAR(std::sqrt(out.array().square().mean()), 0.5, 0.02);
}

TEST(PredictFuture, ZeroNoiseSingleSampleIsPointPrediction) {
  Fixture f;
  auto docs = pointers(f.future);
  ForecastConfig cfg;
  cfg.n_samples = 1;
  ZeroNoise<double> zero;
  auto a = predict_future(f.m, f.W, 0, docs, cfg, zero);
  auto b = predict_future(f.m, f.W, 0, docs, cfg, zero);
  cfg.mode = RolloutMode::Mean;
  GaussianNoise<double> noise(5);
  auto c = predict_future(f.m, f.W, 0, docs, cfg, noise);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.mean, c.mean);
  for (double s : a.stddev) EXPECT_EQ(s, 0.0);
  for (double r : a.mean) {
    EXPECT_GT(r, 0.0);
    EXPECT_LT(r, 1.0);
  }
}

TEST(PredictFuture, MatchesManualMeanPipeline) {
  Fixture f;
  auto docs = pointers(f.future);
  ForecastConfig cfg;
  cfg.mode = RolloutMode::Mean;
  ZeroNoise<double> zero;
  auto r = predict_future(f.m, f.W, 0, docs, cfg, zero);
  // Oracle: posterior mean chain, mean rollout, prior zeta mean.
  Tape<double> t;
  MatXd eta = encode_global(t, f.m, f.W, zero).mean.value();
  MatXd ext = rollout_eta<double>(eta.row(f.T - 1).transpose(), 2, f.m.gen, RolloutMode::Mean, zero);
  MatXd rows(docs.size(), eta.cols());
  for (std::size_t i = 0; i < docs.size(); ++i) rows.row(i) = ext.row(docs[i]->time_index - f.T);
  VecXd expect = readout<double>(f.m, rows, nullptr, docs, ZetaSource::Prior, zero);
  for (std::size_t i = 0; i < docs.size(); ++i) EXPECT_NEAR(r.mean[i], expect(i), 1e-14);
}

TEST(PredictFuture, DeterministicNetsGiveZeroSpread) {
  Fixture f;
  f.m.gen.delta_tr = 1e-12;
  for (auto& w : f.m.gen.theta_decoder.weights) w.value.setZero();
  ForecastConfig cfg;
  cfg.n_samples = 16;
  GaussianNoise<double> noise(6);
  auto r = predict_future(f.m, f.W, 0, pointers(f.future), cfg, noise);
  for (double s : r.stddev) EXPECT_EQ(s, 0.0);
}

TEST(PredictFuture, MonteCarloMeanConverges) {
  Fixture f;
  auto docs = pointers(f.future);
  ForecastConfig c64, c128;
  c64.n_samples = 64;
  c128.n_samples = 128;
  GaussianNoise<double> n1(7), n2(8);
  auto a = predict_future(f.m, f.W, 0, docs, c64, n1);
  auto b = predict_future(f.m, f.W, 0, docs, c128, n2);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const double se = std::sqrt(a.stddev[i] * a.stddev[i] / 64 + b.stddev[i] * b.stddev[i] / 128);
    EXPECT_GT(a.stddev[i], 0.0);
    EXPECT_LT(std::abs(a.mean[i] - b.mean[i]), 3 * se) << "doc " << i;
  }
}

TEST(PredictFuture, ConditionOnFutureBow) {
  Fixture f;
  auto docs = pointers(f.future);
  ForecastConfig cfg;
  cfg.mode = RolloutMode::Mean;
  ZeroNoise<double> zero;
  auto prior = predict_future(f.m, f.W, 0, docs, cfg, zero);
  f.m.cfg.condition_future_bow = true;
  auto post = predict_future(f.m, f.W, 0, docs, cfg, zero);
  EXPECT_NE(prior.mean, post.mean);
}

TEST(PredictFuture, ModelKinds) {
  ForecastConfig cfg;
  cfg.n_samples = 3;
  for (ModelKind k : {ModelKind::StaticTam, ModelKind::Dst, ModelKind::Mlp}) {
    Fixture f(k);
    MatXd W = k == ModelKind::StaticTam ? MatXd(f.W.colwise().sum() / f.W.sum()) : f.W;
    GaussianNoise<double> noise(9);
    auto r = predict_future(f.m, W, 0, pointers(f.future), cfg, noise);
    ASSERT_EQ(r.mean.size(), f.future.size());
    for (double v : r.mean) EXPECT_TRUE(std::isfinite(v));
    if (k == ModelKind::Mlp)
      for (double s : r.stddev) EXPECT_EQ(s, 0.0);
  }
  Fixture trend(ModelKind::DTam, true);
  GaussianNoise<double> noise(10);
  auto r = predict_future(trend.m, trend.W, 0, pointers(trend.future), cfg, noise);
  for (double v : r.mean) EXPECT_TRUE(std::isfinite(v));
}

TEST(PredictFuture, RejectsDocsBeforeWindow) {
  Fixture f;
  auto docs = pointers(f.future);
  ForecastConfig cfg;
  ZeroNoise<double> zero;
  EXPECT_THROW(predict_future(f.m, f.W, 5, docs, cfg, zero), DataError);
  cfg.n_samples = 0;
  EXPECT_THROW(predict_future(f.m, f.W, 0, docs, cfg, zero), UsageError);
}

TEST(PplP, UniformBetaGivesV) {
  Fixture f;
  f.m.gen.alpha.value.setZero();
  ForecastConfig cfg;
  cfg.n_samples = 4;
  GaussianNoise<double> noise(11);
  EXPECT_NEAR(ppl_p(f.m, f.W, 0, pointers(f.future), cfg, noise), f.V, 1e-9);
}

TEST(PplP, OneHotModelOnRepeatedTokenApproachesOne) {
  Fixture f;
  f.m.gen.alpha.value.setZero();
  f.m.gen.alpha.value.col(0).setOnes();
  f.m.gen.rho.value.setZero();
  f.m.gen.rho.value(2, 0) = 60.0;
  std::vector<Document> docs(3);
  for (int i = 0; i < 3; ++i) {
    docs[i].id = "r" + std::to_string(i);
    docs[i].time_index = f.T;
    docs[i].tm_ids.assign(10, 2);
    docs[i].lm_ids = {1, 2};
    docs[i].bow = bow_from_ids(docs[i].tm_ids);
  }
  ForecastConfig cfg;
  GaussianNoise<double> noise(12);
  const double ppl = ppl_p(f.m, f.W, 0, pointers(docs), cfg, noise);
  EXPECT_GE(ppl, 1.0);
  EXPECT_LT(ppl, 1.0 + 1e-12);
}

// A two-topic generator with fixed mixture scored on its own samples: PPL-P
// matches exp(per-token entropy) estimated from an independent simulation.
TEST(PplP, SelfEvaluationMatchesSimulatedEntropy) {
  const int V = 12;
  std::mt19937_64 rng(13);
  auto c = tiny_config(ModelKind::DTam, 2, V);
  auto m = Model<double>::init(c, 14);
  for (auto& w : m.gen.theta_decoder.weights) w.value.setZero();
  m.gen.theta_decoder.biases.back().value << 0.4, -0.4;
  std::normal_distribution<double> g(0.0, 1.5);
  for (Eigen::Index i = 0; i < m.gen.rho.value.size(); ++i) m.gen.rho.value.data()[i] = g(rng);
  Tape<double> t;
  const MatXd beta = topic_word(t, m).value();
  VecXd theta(2);
  theta << std::exp(0.4), std::exp(-0.4);
  theta /= theta.sum();
  const VecXd p = (theta.transpose() * beta).transpose();
  std::discrete_distribution<int> word(p.data(), p.data() + V);

  auto sample_docs = [&](int n) {
    std::vector<Document> docs(n);
    for (int i = 0; i < n; ++i) {
      docs[i].id = "s" + std::to_string(i);
      docs[i].time_index = 3;
      for (int j = 0; j < 40; ++j) docs[i].tm_ids.push_back(word(rng));
      docs[i].lm_ids = {1};
      docs[i].bow = bow_from_ids(docs[i].tm_ids);
    }
    return docs;
  };
  auto eval_docs = sample_docs(200);
  double ll = 0;
  int ntok = 0;
  for (const auto& d : sample_docs(200))
    for (int w : d.tm_ids) {
      ll += std::log(p(w));
      ++ntok;
    }
  const double oracle = std::exp(-ll / ntok);
  auto hist = random_docs(3, 4, V, 12, rng);
  ForecastConfig cfg;
  cfg.n_samples = 8;
  GaussianNoise<double> noise(15);
  const double ppl = ppl_p(m, slice_matrix(hist, 3, V), 0, pointers(eval_docs), cfg, noise);
  EXPECT_NEAR(ppl / oracle, 1.0, 0.05);
}

TEST(PplP, InvariantToDocumentOrder) {
  Fixture f;
  auto docs = pointers(f.future);
  ForecastConfig cfg;
  cfg.mode = RolloutMode::Mean;
  ZeroNoise<double> zero;
  const double a = ppl_p(f.m, f.W, 0, docs, cfg, zero);
  std::reverse(docs.begin(), docs.end());
  const double b = ppl_p(f.m, f.W, 0, docs, cfg, zero);
  EXPECT_NEAR(a, b, 1e-12 * a);
}

TEST(PplP, EmptySliceRejected) {
  Fixture f;
  std::vector<Document> empty(1);
  empty[0].time_index = f.T;
  ForecastConfig cfg;
  ZeroNoise<double> zero;
  EXPECT_THROW(ppl_p(f.m, f.W, 0, pointers(empty), cfg, zero), DataError);
}

TEST(Predictions, CsvWithScaler) {
  Fixture f;
  auto docs = pointers(f.future);
  ForecastResult r{std::vector<double>(docs.size(), 0.5), std::vector<double>(docs.size(), 0.1)};
  LabelScaler sc{10.0, 30.0};
  const auto path = std::filesystem::temp_directory_path() / "dtam_pred_test.csv";
  write_predictions_csv(path, docs, r, &sc, false);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "doc_id,time_index,r_hat_mean,r_hat_std,r_true");
  std::getline(in, line);
  EXPECT_EQ(line, docs[0]->id + "," + std::to_string(docs[0]->time_index) + ",20,2,");
  std::filesystem::remove(path);
}
