#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dtam/dtm.hpp"
#include "dtam/metrics.hpp"
#include "test_util.hpp"

using namespace dtam;
using namespace dtam::testing;

TEST(R2, Examples) {
  EXPECT_DOUBLE_EQ(r2({0.1, 0.5, 0.9}, {0.1, 0.5, 0.9}), 1.0);
  EXPECT_DOUBLE_EQ(r2({0.5, 0.5, 0.5}, {0.1, 0.5, 0.9}), 0.0);
  EXPECT_DOUBLE_EQ(r2({1, 0}, {0, 1}), -3.0);
  EXPECT_THROW(r2({1, 2}, {3, 3}), DomainError);
  EXPECT_THROW(r2({1}, {1}), DomainError);
  EXPECT_THROW(r2({1, 2}, {1}), DimensionError);
}

TEST(R2, AffineInvariance) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(10), y(10), pa(10), ya(10);
    const double a = g(rng) * 3 + (g(rng) > 0 ? 0.1 : -0.1), b = g(rng) * 5;
    for (int i = 0; i < 10; ++i) {
      p[i] = g(rng);
      y[i] = g(rng);
      pa[i] = a * p[i] + b;
      ya[i] = a * y[i] + b;
    }
    EXPECT_NEAR(r2(pa, ya), r2(p, y), 1e-9);
  }
}

TEST(R2, PerSliceAndCumulative) {
  std::vector<Document> docs(5);
  const int slices[] = {4, 3, 3, 4, 5};
  const double ys[] = {0.2, 0.1, 0.3, 0.6, 0.5};
  for (int i = 0; i < 5; ++i) {
    docs[i].time_index = slices[i];
    docs[i].rating = ys[i];
  }
  const std::vector<double> pred = {0.2, 0.2, 0.2, 0.6, 0.1};
  auto s = per_slice_r2(pointers(docs), pred);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].time_index, 3);
  EXPECT_EQ(s[0].n, 2);
  EXPECT_DOUBLE_EQ(s[0].r2, r2({0.2, 0.2}, {0.1, 0.3}));
  EXPECT_DOUBLE_EQ(s[1].r2, r2({0.2, 0.6}, {0.2, 0.6}));
  EXPECT_TRUE(std::isnan(s[2].r2));
  EXPECT_DOUBLE_EQ(s[1].cumulative_r2, (s[0].r2 + s[1].r2) / 2);
  EXPECT_DOUBLE_EQ(s[2].cumulative_r2, s[1].cumulative_r2);
}

namespace {

struct DcFixture {
  int V = 9, T = 3;
  std::vector<Document> history, test;
  MatXd W;
  Model<double> m;
  DcFixture() {
    std::mt19937_64 rng(2);
    history = random_docs(T, 4, V, 12, rng);
    W = slice_matrix(history, T, V);
    test = random_docs(T, 2, V, 12, rng, 3, 9);
    m = Model<double>::init(tiny_config(ModelKind::DTam, 3, V), 3);
  }
};

}  // namespace

TEST(PplDc, UniformBetaIsV) {
  DcFixture f;
  f.m.gen.alpha.value.setZero();
  EXPECT_NEAR(ppl_dc(f.m, f.W, 0, pointers(f.test)), f.V, 1e-9);
}

TEST(PplDc, MatchesValueLevelOracle) {
  DcFixture f;
  ZeroNoise<double> zero;
  auto traj = encode_global(f.m, f.W, zero);
  const MatXd beta = topic_word_matrix(f.m.gen);
  double ll = 0, ntok = 0;
  for (const auto& d : f.test) {
    auto [w1, w2] = *completion_split(d);
    VecXd counts = VecXd::Zero(f.V);
    for (const auto& [v, c] : w1) counts(v) += c;
    VecXd eta = traj.posteriors[static_cast<std::size_t>(d.time_index)].mean;
    auto [q, sample] = encode_local(f.m, counts, eta, zero);
    const VecXd theta = decode_theta<double>(q.mean, f.m.gen);
    ll += bow_log_likelihood<double>(w2, theta, beta);
    for (const auto& [v, c] : w2) ntok += c;
  }
  EXPECT_NEAR(ppl_dc(f.m, f.W, 0, pointers(f.test)), std::exp(-ll / ntok), 1e-9);
}

TEST(PplDc, ShortDocsExcluded) {
  DcFixture f;
  std::vector<Document> docs = f.test;
  Document one;
  one.id = "one";
  one.time_index = 1;
  one.tm_ids = {4};
  one.bow = bow_from_ids(one.tm_ids);
  docs.push_back(one);
  EXPECT_DOUBLE_EQ(ppl_dc(f.m, f.W, 0, pointers(docs)), ppl_dc(f.m, f.W, 0, pointers(f.test)));
  EXPECT_THROW(ppl_dc(f.m, f.W, 0, pointers(std::vector<Document>{one})), DataError);
}

// Fixed-mixture generator: self-evaluation lands near its simulated
// exp-entropy, and its beta beats the uniform one.
TEST(PplDc, SelfEvaluationAndOracleBeta) {
  const int V = 12;
  std::mt19937_64 rng(4);
  auto m = Model<double>::init(tiny_config(ModelKind::DTam, 2, V), 5);
  for (auto& w : m.gen.theta_decoder.weights) w.value.setZero();
  m.gen.theta_decoder.biases.back().value << 0.7, -0.2;
  std::normal_distribution<double> g(0.0, 1.5);
  for (Eigen::Index i = 0; i < m.gen.rho.value.size(); ++i) m.gen.rho.value.data()[i] = g(rng);
  const MatXd beta = topic_word_matrix(m.gen);
  VecXd theta(2);
  theta << std::exp(0.7), std::exp(-0.2);
  theta /= theta.sum();
  const VecXd p = (theta.transpose() * beta).transpose();
  std::discrete_distribution<int> word(p.data(), p.data() + V);
  auto sample = [&](int n) {
    std::vector<Document> docs(n);
    for (int i = 0; i < n; ++i) {
      docs[i].id = "s" + std::to_string(i);
      docs[i].time_index = i % 3;
      for (int j = 0; j < 40; ++j) docs[i].tm_ids.push_back(word(rng));
      docs[i].bow = bow_from_ids(docs[i].tm_ids);
    }
    return docs;
  };
  auto hist = sample(30);
  const MatXd W = slice_matrix(hist, 3, V);
  auto test = sample(200);
  double ll = 0;
  int n = 0;
  for (const auto& d : sample(200))
    for (int w : d.tm_ids) {
      ll += std::log(p(w));
      ++n;
    }
  const double oracle = std::exp(-ll / n);
  const double self = ppl_dc(m, W, 0, pointers(test));
  EXPECT_NEAR(self / oracle, 1.0, 0.05);
  auto uniform = m;
  uniform.gen.alpha.value.setZero();
  EXPECT_LE(self, ppl_dc(uniform, W, 0, pointers(test)));
}

namespace {

Bow bow_of(std::initializer_list<int> ids) { return bow_from_ids(std::vector<int>(ids)); }

std::vector<const Bow*> ptrs(const std::vector<Bow>& b) {
  std::vector<const Bow*> out;
  for (const auto& x : b) out.push_back(&x);
  return out;
}

}  // namespace

TEST(Coherence, DefinitionLimits) {
  // Words 0 and 1 in every document.
  std::vector<Bow> all = {bow_of({0, 1}), bow_of({0, 1, 2}), bow_of({1, 0})};
  EXPECT_DOUBLE_EQ(npmi_coherence({{0, 1}}, ptrs(all)).mean, 1.0);
  // Always together, not everywhere.
  std::vector<Bow> some = {bow_of({0, 1}), bow_of({2}), bow_of({0, 1, 3})};
  EXPECT_NEAR(npmi_coherence({{0, 1}}, ptrs(some)).mean, 1.0, 1e-9);
  // Never together.
  std::vector<Bow> apart = {bow_of({0}), bow_of({1}), bow_of({2})};
  EXPECT_DOUBLE_EQ(npmi_coherence({{0, 1}}, ptrs(apart)).mean, -1.0);
}

TEST(Coherence, AnalyticValues) {
  // N = 4. a in {0,1}, b in {1,2}: P(ab) = P(a)P(b) -> 0.
  std::vector<Bow> docs = {bow_of({0}), bow_of({0, 1}), bow_of({1}), bow_of({5})};
  EXPECT_NEAR(npmi_coherence({{0, 1}}, ptrs(docs)).mean, 0.0, 1e-9);
  // a in {0,1,2}, b in {1,2,3}.
  std::vector<Bow> d2 = {bow_of({0}), bow_of({0, 1}), bow_of({0, 1}), bow_of({1})};
  const double expect = std::log(0.5 / (0.75 * 0.75)) / -std::log(0.5);
  EXPECT_NEAR(npmi_coherence({{0, 1}}, ptrs(d2)).mean, expect, 1e-9);
  // Averaged over pairs, then over topics.
  auto r = npmi_coherence({{0, 1}, {0, 1, 7}}, ptrs(d2));
  EXPECT_EQ(r.pairs_scored, 2);
  EXPECT_EQ(r.pairs_skipped, 2);
  EXPECT_NEAR(r.mean, expect, 1e-9);
}

TEST(Coherence, IndependentWordsNearZero) {
  std::mt19937_64 rng(6);
  std::bernoulli_distribution half(0.5);
  std::vector<Bow> docs;
  for (int d = 0; d < 20000; ++d) {
    std::vector<int> ids = {9};
    if (half(rng)) ids.push_back(0);
    if (half(rng)) ids.push_back(1);
    docs.push_back(bow_from_ids(ids));
  }
  EXPECT_NEAR(npmi_coherence({{0, 1}}, ptrs(docs)).mean, 0.0, 0.02);
}

TEST(Coherence, SkipsAndErrors) {
  std::vector<Bow> docs = {bow_of({0, 1}), bow_of({1})};
  EXPECT_THROW(npmi_coherence({{5, 6}}, ptrs(docs)), DataError);
  EXPECT_THROW(npmi_coherence({{0, 1}}, {}), DataError);
  auto r = npmi_coherence({{0, 1}, {5, 6}}, ptrs(docs));
  EXPECT_TRUE(std::isnan(r.per_topic[1]));
  EXPECT_DOUBLE_EQ(r.mean, r.per_topic[0]);
}

TEST(Coherence, RangeAndPermutationInvariance) {
  std::mt19937_64 rng(7);
  const int V = 15;
  auto docs = random_docs(4, 10, V, 12, rng, 2, 8);
  MatXd beta = MatXd::Random(4, V).array().exp();
  beta = (beta.array().colwise() / beta.rowwise().sum().array()).matrix();
  auto ref = pointers(docs);
  auto a = topic_coherence<double>(beta, ref, 5);
  EXPECT_GE(a.mean, -1.0);
  EXPECT_LE(a.mean, 1.0);
  std::shuffle(ref.begin(), ref.end(), rng);
  MatXd rev = beta.colwise().reverse();
  EXPECT_NEAR(topic_coherence<double>(rev, ref, 5).mean, a.mean, 1e-12);
  EXPECT_THROW(topic_coherence<double>(beta, ref, 1), UsageError);
}

TEST(Evaluate, ReportAndFiles) {
  DcFixture f;
  std::mt19937_64 rng(8);
  auto future = random_docs(f.T + 2, 3, f.V, 12, rng, 3, 8);
  future.erase(future.begin(), future.begin() + 3 * f.T);
  ForecastConfig cfg;
  cfg.mode = RolloutMode::Mean;
  ZeroNoise<double> zero;
  auto rep = evaluate(f.m, f.W, 0, pointers(future), pointers(f.history), cfg, zero, 5);
  EXPECT_TRUE(std::isfinite(rep.r2));
  EXPECT_GE(rep.ppl_dc, 1.0);
  EXPECT_GE(rep.ppl_p, 1.0);
  EXPECT_GE(rep.tc, -1.0);
  EXPECT_LE(rep.tc, 1.0);
  EXPECT_EQ(rep.slices.size(), 2u);
  EXPECT_EQ(rep.fingerprint, config_fingerprint(f.m.cfg));
  const auto dir = std::filesystem::temp_directory_path();
  rep.write(dir / "dtam_eval.txt");
  rep.write_slices_csv(dir / "dtam_eval_slices.csv");
  auto kv = KeyValues::load((dir / "dtam_eval.txt").string());
  EXPECT_DOUBLE_EQ(kv.get_double("r2", 0), rep.r2);
  std::ifstream in(dir / "dtam_eval_slices.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "time_index,n,r2,cumulative_r2");

  auto mlp = Model<double>::init(tiny_config(ModelKind::Mlp, 3, f.V), 1);
  auto rm = evaluate(mlp, f.W, 0, pointers(future), pointers(f.history), cfg, zero);
  EXPECT_TRUE(std::isnan(rm.ppl_p));
  EXPECT_TRUE(std::isnan(rm.tc));
}

// Published TC values (prediction split, 4 communities x 5 topic models x
// K in {25, 50, 100}) all lie in the NPMI range.
TEST(Coherence, PublishedValuesWithinNpmiRange) {
  const std::vector<double> tc = {
      -0.32, -0.38, -0.35, -0.06, -0.14, -0.23, -0.45, -0.36, -0.41, -0.34, -0.45, -0.59, -0.27, -0.39, -0.50,
      -0.52, -0.63, -0.27, -0.58, -0.56, 0.07,  -0.36, -0.63, -0.56, -0.26, -0.50, -0.36, 0.01,  -0.21, -0.31,
      -0.53, -0.63, 0.03,  -0.12, -0.12, 0.05,  -0.29, -0.34, -0.42, 0.03,  -0.48, -0.52, -0.04, -0.34, -0.29,
      -0.40, -0.59, -0.29, 0.17,  -0.32, 0.14,  -0.39, -0.57, -0.51, -0.07, -0.30, -0.44, 0.00,  -0.33, -0.22};
  ASSERT_EQ(tc.size(), 60u);
  EXPECT_DOUBLE_EQ(*std::min_element(tc.begin(), tc.end()), -0.63);
  EXPECT_DOUBLE_EQ(*std::max_element(tc.begin(), tc.end()), 0.17);
  for (double v : tc) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}
