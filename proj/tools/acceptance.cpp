#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dtam/dtm.hpp"
#include "dtam/forecast.hpp"
#include "dtam/metrics.hpp"
#include "dtam/synthgen.hpp"
#include "dtam/trainer.hpp"

using namespace dtam;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <typename... A>
std::string fmt(const char* f, A... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------- shared fixtures

MatXd normal_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  MatXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Small smooth model; every dimension is at most 8.
ModelConfig toy_config(int K, int V, int lm_vocab) {
  ModelConfig c;
  c.kind = ModelKind::DTam;
  c.K = K;
  c.V = V;
  c.E = 4;
  c.eta_dim = 3;
  c.zeta_dim = 3;
  c.encoder_hidden = {5};
  c.transition_hidden = {4};
  c.global_head_hidden = {4};
  c.decoder_hidden = {};
  c.global_cell = CellKind::Lstm;
  c.global_layers = 1;
  c.global_hidden = 4;
  c.lm_vocab = lm_vocab;
  c.lm_embed = 3;
  c.word_hidden = 4;
  c.regressor_hidden = {4};
  c.activation = Activation::Tanh;
  c.dropout = 0.0;
  c.delta_tr = 0.5;
  c.delta_att = 0.1;
  c.xi_dim = 2;
  return c;
}

std::vector<Document> random_docs(int T, int per_slice, int V, int lm_vocab, std::mt19937_64& rng, int min_len = 2,
                                  int max_len = 6) {
  std::vector<Document> docs;
  std::uniform_int_distribution<int> len(min_len, max_len), tv(0, V - 1), lv(1, lm_vocab - 1);
  std::uniform_real_distribution<double> r(0.0, 1.0);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < per_slice; ++i) {
      Document d;
      d.id = "d" + std::to_string(t) + "_" + std::to_string(i);
      d.time_index = t;
      const int n = len(rng);
      for (int j = 0; j < n; ++j) {
        d.tm_ids.push_back(tv(rng));
        d.lm_ids.push_back(lv(rng));
      }
      d.bow = bow_from_ids(d.tm_ids);
      d.rating = r(rng);
      docs.push_back(std::move(d));
    }
  return docs;
}

std::vector<const Document*> pointers(const std::vector<Document>& docs) {
  std::vector<const Document*> p;
  for (const auto& d : docs) p.push_back(&d);
  return p;
}

MatXd slice_matrix(const std::vector<Document>& docs, int T, int V) {
  MatXd W = MatXd::Zero(T, V);
  for (const auto& d : docs)
    for (const auto& [v, c] : d.bow) W(d.time_index, v) += c;
  for (int t = 0; t < T; ++t)
    if (W.row(t).sum() > 0) W.row(t) /= W.row(t).sum();
  return W;
}

Batch<double> batch_of(const std::vector<Document>& docs) {
  Batch<double> b;
  for (const auto& d : docs) {
    b.docs.push_back(&d);
    b.rows.push_back(d.time_index);
  }
  return b;
}

// Replays a fixed block of standard normals so every evaluation sees the same draws.
struct Replay : NoiseSource<double> {
  const MatXd* src = nullptr;
  Eigen::Index row = 0;
  MatXd normal(Eigen::Index r, Eigen::Index c) override {
    MatXd out = src->block(row, 0, r, c);
    row += r;
    return out;
  }
};

// History/future split of a synthetic corpus with a per-slice train/val split.
struct SplitCorpus {
  SyntheticCorpus corpus;
  RandomSplit split;
  CorpusTimeline train;
  std::vector<const Document*> future;
};

SplitCorpus split_corpus(const ScenarioConfig& sc, int T_hist, std::uint64_t seed) {
  SplitCorpus s{sample_timeline(sc), {}, {}, {}};
  CorpusTimeline hist;
  hist.V = sc.V;
  hist.slices.assign(s.corpus.timeline.slices.begin(), s.corpus.timeline.slices.begin() + T_hist);
  s.split = random_split(hist, {0.8, 0.1, 0.1}, seed);
  s.train = make_timeline(s.split.train, sc.V, 0, T_hist);
  for (int t = T_hist; t < sc.T; ++t)
    for (const auto& d : s.corpus.timeline.slices[static_cast<std::size_t>(t)].docs) s.future.push_back(&d);
  return s;
}

// ---------------------------------------------------------------- 1: gradients

Outcome gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string where;
  std::size_t checked = 0;
  for (bool trend : {false, true}) {
    ModelConfig c = toy_config(3, 20, 8);
    c.trend = trend;
    c.alpha_y = 10;
    auto m = Model<double>::init(c, 101);
    std::mt19937_64 rng(102);
    // Unit-scale embeddings keep word-encoder gradients above finite-difference noise.
    m.att.lm_embeddings.value = normal_mat(c.lm_vocab, c.lm_embed, rng);
    auto docs = random_docs(3, 4, c.V, c.lm_vocab, rng);
    const MatXd W = slice_matrix(docs, 3, c.V);
    const auto batch = batch_of(docs);
    GaussianNoise<double> draw(103);
    const MatXd eps = draw.normal(256, 16);
    auto f = [&](Tape<double>& t) {
      Replay r;
      r.src = &eps;
      return joint_loss(t, m, W, batch, r).loss;
    };
    const GradCheckReport rep = grad_check<double>(f, m.named(), 1e-4);
    checked += rep.entries_checked;
    if (rep.max_rel_error >= worst) {
      worst = rep.max_rel_error;
      where = (trend ? "trend " : "core ") + rep.worst_entry;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60,
          fmt("max rel error %.3g (< 1e-4) at %s over %zu entries, %.1fs (< 60s)", worst, where.c_str(), checked, secs)};
}

// ---------------------------------------------------------------- 2: probability invariants

Outcome probability_invariants() {
  std::mt19937_64 rng(201);
  std::uniform_int_distribution<int> kd(1, 6), vd(2, 15), ed(1, 6), nd(0, 30);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int cases = 10000;
  int failures = 0;
  std::string first;
  auto fail = [&](int i, const std::string& what) {
    if (failures++ == 0) first = fmt("case %d: %s", i, what.c_str());
  };
  for (int i = 0; i < cases; ++i) {
    const int K = kd(rng), V = vd(rng), E = ed(rng);
    const double spread = std::pow(10.0, 1.5 * (u(rng) + 1.0));  // 1 .. 1000
    const MatXd beta =
        topic_word_matrix<double>(normal_mat(K, E, rng, std::sqrt(spread)), normal_mat(V, E, rng, std::sqrt(spread)));
    if ((beta.array() < 0).any() || (beta.rowwise().sum().array() - 1.0).abs().maxCoeff() > 1e-10)
      fail(i, "beta row off the simplex");
    const VecXd zeta = normal_mat(K, 1, rng, spread);
    const VecXd theta = softmax<double>(zeta);
    if ((theta.array() < 0).any() || std::abs(theta.sum() - 1.0) > 1e-10) fail(i, "theta off the simplex");

    const double shift = 100.0 * u(rng);
    if ((softmax<double>(VecXd(zeta.array() + shift)) - theta).cwiseAbs().maxCoeff() > 1e-12) fail(i, "softmax shift");

    DiagGaussian<double> q(normal_mat(K, 1, rng), VecXd(normal_mat(K, 1, rng).array().exp()));
    DiagGaussian<double> p(normal_mat(K, 1, rng), VecXd(normal_mat(K, 1, rng).array().exp()));
    const double kqp = kl_diag_gaussian(q, p), kqq = kl_diag_gaussian(q, q);
    if (!(kqp > 0)) fail(i, fmt("KL(q||p) = %.3g for q != p", kqp));
    if (kqq != 0.0) fail(i, fmt("KL(q||q) = %.3g", kqq));

    std::vector<int> ids1(static_cast<std::size_t>(nd(rng))), ids2(static_cast<std::size_t>(nd(rng)));
    std::uniform_int_distribution<int> wd(0, V - 1);
    for (auto& w : ids1) w = wd(rng);
    for (auto& w : ids2) w = wd(rng);
    const double l1 = bow_log_likelihood<double>(bow_from_ids(ids1), theta, beta);
    std::vector<int> shuffled = ids1;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const double l1s = bow_log_likelihood<double>(bow_from_ids(shuffled), theta, beta);
    if (std::abs(l1 - l1s) > 1e-12 * std::max(1.0, std::abs(l1))) fail(i, "bow order");
    std::vector<int> both = ids1;
    both.insert(both.end(), ids2.begin(), ids2.end());
    const double l2 = bow_log_likelihood<double>(bow_from_ids(ids2), theta, beta);
    const double l12 = bow_log_likelihood<double>(bow_from_ids(both), theta, beta);
    if (std::abs(l12 - (l1 + l2)) > 1e-10 * std::max(1.0, std::abs(l12))) fail(i, "bow additivity");
  }
  return {failures == 0, fmt("%d cases, %d failures%s%s", cases, failures, failures ? "; first " : "", first.c_str())};
}

// ---------------------------------------------------------------- 3: likelihood oracle

// log of the sum over every topic assignment z of prod_i theta_{z_i} beta_{z_i, w_i}.
double brute_force_log_likelihood(const std::vector<int>& words, const VecXd& theta, const MatXd& beta) {
  const int K = static_cast<int>(theta.size());
  const auto n = words.size();
  std::vector<int> z(n, 0);
  double total = 0;
  while (true) {
    double p = 1;
    for (std::size_t i = 0; i < n; ++i) p *= theta(z[i]) * beta(z[i], words[i]);
    total += p;
    std::size_t j = 0;
    while (j < n && ++z[j] == K) z[j++] = 0;
    if (j == n) break;
  }
  return std::log(total);
}

Outcome likelihood_oracle() {
  std::mt19937_64 rng(301);
  double worst = 0;
  long instances = 0;
  for (int K = 1; K <= 3; ++K)
    for (int V = 1; V <= 5; ++V)
      for (int draw = 0; draw < 4; ++draw) {
        const MatXd beta = topic_word_matrix<double>(normal_mat(K, 3, rng), normal_mat(V, 3, rng));
        const VecXd theta = softmax<double>(VecXd(normal_mat(K, 1, rng)));
        for (std::size_t n = 0; n <= 4; ++n) {
          std::vector<int> w(n, 0);
          while (true) {
            const double a = bow_log_likelihood<double>(bow_from_ids(w), theta, beta);
            worst = std::max(worst, std::abs(a - brute_force_log_likelihood(w, theta, beta)));
            ++instances;
            std::size_t j = 0;
            while (j < n && ++w[j] == V) w[j++] = 0;
            if (j == n) break;
          }
        }
      }
  return {worst <= 1e-12, fmt("%ld instances, max |diff| %.3g (<= 1e-12)", instances, worst)};
}

// ---------------------------------------------------------------- 4: ELBO bound

Outcome elbo_bound() {
  const auto t0 = Clock::now();
  ModelConfig c = toy_config(2, 4, 12);
  c.eta_dim = 2;
  c.zeta_dim = 2;
  auto m = Model<double>::init(c, 10);
  std::mt19937_64 rng(16);
  auto docs = random_docs(1, 1, 4, 12, rng, 5, 5);
  const MatXd W = slice_matrix(docs, 1, 4);

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

  // p(w) = E over eta ~ N(0, I), zeta ~ N(eta W + c, I) of p(w | theta(zeta)).
  const int n = 100000;
  GaussianNoise<double> prior(12);
  const MatXd eta = prior.normal(n, 2);
  MatXd zeta = (eta * m.gen.zeta_w.value).rowwise() + m.gen.zeta_c.value.row(0);
  zeta += prior.normal(n, 2);
  const MatXd theta = softmax<double>(mlp_apply<double>(m.gen.theta_decoder, zeta));
  const MatXd beta = topic_word_matrix(m.gen);
  VecXd ll(n);
  for (int i = 0; i < n; ++i) ll(i) = bow_log_likelihood<double>(docs[0].bow, VecXd(theta.row(i).transpose()), beta);
  const double mx = ll.maxCoeff();
  const VecXd p = (ll.array() - mx).exp();
  const double pm = p.mean();
  const double log_evidence = mx + std::log(pm);
  const double p_sd = std::sqrt((p.array() - pm).square().sum() / (n - 1));
  const double is_se = p_sd / (pm * std::sqrt(static_cast<double>(n)));
  const double se = std::hypot(elbo_se, is_se);
  const double secs = seconds_since(t0);
  return {elbo_mean <= log_evidence + 3 * se && secs < 120,
          fmt("ELBO %.5f <= log p(w) %.5f + 3 SE (SE %.2g), %.1fs (< 120s)", elbo_mean, log_evidence, se, secs)};
}

// ---------------------------------------------------------------- 5, 6: drift

struct DriftSetup {
  KeyValues model_over, train_over, scenario_over;
  bool verbose = false;
};

ScenarioConfig drift_scenario(bool drifting, std::uint64_t seed, const KeyValues& over) {
  ScenarioConfig sc;
  sc.K = 3;
  sc.V = 100;
  sc.T = 30;
  sc.docs_per_slice = 100;
  sc.tokens_per_doc = 50;
  sc.dynamics = {drifting ? Dynamics::Trend : Dynamics::Stationary, Dynamics::Stationary, Dynamics::Stationary};
  sc.rating_weights = {4.0, -2.0, -2.0};
  sc.rating_noise = 0.3;
  sc.amplitude = 1.0;
  sc.seed = seed;
  return ScenarioConfig::from_map(over, sc);
}

ModelConfig drift_model(ModelKind kind, int V, const KeyValues& over) {
  ModelConfig c;
  c.kind = kind;
  c.K = 3;
  c.V = V;
  c.E = 8;
  c.encoder_hidden = {32};
  c.transition_hidden = {16};
  c.global_head_hidden = {16};
  c.decoder_hidden = {};
  c.global_layers = 1;
  c.global_hidden = 16;
  c.lm_vocab = V + 1;
  c.lm_embed = 16;
  c.word_hidden = 16;
  c.regressor_hidden = {16};
  c.dropout = 0.0;
  c.alpha_y = 300;
  return ModelConfig::from_map(over, c);
}

TrainConfig drift_train(std::uint64_t seed, const KeyValues& over) {
  TrainConfig t;
  t.learning_rate = 2e-3;
  t.batch_size = 32;
  t.max_epochs = 30;
  t.patience = 8;
  t.seed = seed;
  t.deterministic = true;
  return TrainConfig::from_map(over, t);
}

struct DriftResult {
  double r2_dynamic = 0, r2_static = 0;
};

DriftResult drift_experiment(bool drifting, std::uint64_t seed, const DriftSetup& setup) {
  const ScenarioConfig sc = drift_scenario(drifting, seed, setup.scenario_over);
  const int T_hist = 20;
  const SplitCorpus sp = split_corpus(sc, T_hist, seed);
  std::vector<double> truth;
  for (const auto* d : sp.future) truth.push_back(d->rating);

  DriftResult out;
  for (ModelKind kind : {ModelKind::DTam, ModelKind::StaticTam}) {
    const auto t0 = Clock::now();
    const ModelConfig mc = drift_model(kind, sc.V, setup.model_over);
    const TrainConfig tc = drift_train(seed, setup.train_over);
    auto data = make_train_data<double>(sp.train, sp.split.val, kind);
    auto res = train(Model<double>::init(mc, seed), tc, data, [&](const EpochStats& e) {
      if (setup.verbose)
        std::fprintf(stderr, "  [%s seed %llu] epoch %d loss %.3f reg %.4f val_rmse %.4f\n", to_string(kind).c_str(),
                     static_cast<unsigned long long>(seed), e.epoch, e.loss, e.reg_loss, e.val_rmse);
    });
    ForecastConfig fc;
    fc.mode = RolloutMode::Mean;
    ZeroNoise<double> zero;
    const ForecastResult fr = predict_future(res.model, data.W, data.first_index, sp.future, fc, zero);
    const double score = r2(fr.mean, truth);
    (kind == ModelKind::DTam ? out.r2_dynamic : out.r2_static) = score;
    if (setup.verbose) {
      for (int t = T_hist; t < sc.T; ++t) {
        double mt = 0, mp = 0;
        int n = 0;
        for (std::size_t i = 0; i < sp.future.size(); ++i)
          if (sp.future[i]->time_index == t) mt += truth[i], mp += fr.mean[i], ++n;
        std::fprintf(stderr, "    slice %d mean rating %.3f predicted %.3f\n", t, mt / n, mp / n);
      }
      std::fprintf(stderr, "  [%s seed %llu] best epoch %d val %.4f future R2 %.4f (%.1fs)\n", to_string(kind).c_str(),
                   static_cast<unsigned long long>(seed), res.best_epoch, res.best_val_rmse, score, seconds_since(t0));
    }
  }
  return out;
}

Outcome drift_criterion(bool drifting, int seeds, const DriftSetup& setup) {
  const auto t0 = Clock::now();
  double sum_diff = 0, sum_dyn = 0, max_abs = 0;
  std::string per;
  for (int s = 0; s < seeds; ++s) {
    const DriftResult r = drift_experiment(drifting, static_cast<std::uint64_t>(s + 1), setup);
    sum_diff += r.r2_dynamic - r.r2_static;
    sum_dyn += r.r2_dynamic;
    max_abs = std::max(max_abs, std::abs(r.r2_dynamic - r.r2_static));
    per += fmt(" (%.3f, %.3f)", r.r2_dynamic, r.r2_static);
  }
  const double mean_diff = sum_diff / seeds, mean_dyn = sum_dyn / seeds;
  const double secs = seconds_since(t0);
  if (drifting)
    return {mean_diff >= 0.05 && mean_dyn > 0 && secs < 1800,
            fmt("mean R2(dyn) - R2(static) %.4f (>= 0.05), mean R2(dyn) %.4f (> 0), %d seeds, %.0fs (< 1800s); "
                "per seed (dyn, static):",
                mean_diff, mean_dyn, seeds, secs) +
                per};
  return {std::abs(mean_diff) <= 0.05,
          fmt("|mean R2(dyn) - R2(static)| %.4f (<= 0.05), max per seed %.4f, %d seeds, %.0fs; per seed (dyn, static):",
              std::abs(mean_diff), max_abs, seeds, secs) +
              per};
}

// ---------------------------------------------------------------- 7: metric sanity

// Generator with a fixed mixture: theta does not depend on zeta.
Model<double> fixed_mixture(int K, int V, std::mt19937_64& rng, VecXd& p_word) {
  auto m = Model<double>::init(toy_config(K, V, 12), 701);
  for (auto& w : m.gen.theta_decoder.weights) w.value.setZero();
  m.gen.theta_decoder.biases.back().value = normal_mat(1, K, rng);
  m.gen.rho.value = normal_mat(V, m.cfg.E, rng, 1.5);
  const VecXd theta = softmax<double>(VecXd(m.gen.theta_decoder.biases.back().value.row(0).transpose()));
  p_word = (theta.transpose() * topic_word_matrix(m.gen)).transpose();
  return m;
}

std::vector<Document> sample_mixture_docs(const VecXd& p, int n, int len, int time_index, std::mt19937_64& rng) {
  std::discrete_distribution<int> word(p.data(), p.data() + p.size());
  std::vector<Document> docs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& d = docs[static_cast<std::size_t>(i)];
    d.id = "m" + std::to_string(i);
    d.time_index = time_index;
    for (int j = 0; j < len; ++j) d.tm_ids.push_back(word(rng));
    d.lm_ids = {1};
    d.bow = bow_from_ids(d.tm_ids);
  }
  return docs;
}

Outcome metric_sanity() {
  std::mt19937_64 rng(702);
  std::string detail;
  bool ok = true;

  {
    const int V = 37;
    auto m = Model<double>::init(toy_config(3, V, 12), 703);
    m.gen.alpha.value.setZero();
    auto docs = random_docs(4, 10, V, 12, rng, 2, 30);
    const double ppl = ppl_dc(m, slice_matrix(docs, 4, V), 0, pointers(docs));
    ok = ok && std::abs(ppl - V) <= 1e-9 * V;
    detail += fmt("uniform-beta PPL-DC %.12g (V = %d)", ppl, V);
  }

  {
    const int V = 50;
    VecXd p;
    auto m = fixed_mixture(3, V, rng, p);
    double ll = 0;
    long ntok = 0;
    for (const auto& d : sample_mixture_docs(p, 500, 40, 0, rng))
      for (int w : d.tm_ids) ll += std::log(p(w)), ++ntok;
    const double oracle = std::exp(-ll / static_cast<double>(ntok));
    auto hist = sample_mixture_docs(p, 30, 40, 0, rng);
    for (std::size_t i = 0; i < hist.size(); ++i) hist[i].time_index = static_cast<int>(i % 3);
    const MatXd W = slice_matrix(hist, 3, V);
    auto in_window = sample_mixture_docs(p, 300, 40, 2, rng);
    auto future = sample_mixture_docs(p, 300, 40, 4, rng);
    const double dc = ppl_dc(m, W, 0, pointers(in_window));
    ForecastConfig fc;
    fc.n_samples = 8;
    GaussianNoise<double> noise(704);
    const double pp = ppl_p(m, W, 0, pointers(future), fc, noise);
    ok = ok && std::abs(dc / oracle - 1) <= 0.05 && std::abs(pp / oracle - 1) <= 0.05;
    detail += fmt("; simulated exp-entropy %.3f, self PPL-DC %.3f, self PPL-P %.3f (within 5%%)", oracle, dc, pp);
  }

  {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    int scored = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const int V = 10 + trial % 40;
      const double sd = 0.5 + trial % 7;
      const MatXd beta = topic_word_matrix<double>(normal_mat(4, 5, rng, sd), normal_mat(V, 5, rng, sd));
      auto docs = random_docs(1, 5 + trial % 60, V, 12, rng, 1, 25);
      const CoherenceResult cr = topic_coherence<double>(beta, pointers(docs), 10);
      for (double v : cr.per_topic)
        if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v), ++scored;
    }
    ok = ok && scored > 0 && lo >= -1 && hi <= 1;
    detail += fmt("; TC of %d topics in [%.3f, %.3f]", scored, lo, hi);
  }
  return {ok, detail};
}

// ---------------------------------------------------------------- 8: determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Empty when both trees hold the same files with the same bytes.
std::string tree_difference(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a)) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b)) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return "file lists differ";
  for (const auto& f : fa)
    if (fs::is_regular_file(a / f) && slurp(a / f) != slurp(b / f)) return f.string() + " differs";
  return "";
}

bool bit_equal(Model<double>& a, Model<double>& b) {
  auto pa = a.named(), pb = b.named();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto& x = pa[i].second->value;
    const auto& y = pb[i].second->value;
    if (pa[i].first != pb[i].first || x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (!std::equal(x.data(), x.data() + x.size(), y.data())) return false;
  }
  return true;
}

Outcome determinism(const fs::path& scratch) {
  ScenarioConfig sc;
  sc.K = 3;
  sc.V = 40;
  sc.T = 8;
  sc.docs_per_slice = 20;
  sc.tokens_per_doc = 20;
  sc.dynamics = {Dynamics::Trend, Dynamics::Seasonal, Dynamics::Stationary};
  sc.rating_weights = {2.0, -1.0, 0.5};
  sc.rating_noise = 0.2;
  sc.seed = 801;
  const SplitCorpus sp = split_corpus(sc, 6, 802);
  std::vector<const Document*> reference;
  for (const auto& d : sp.split.train) reference.push_back(&d);

  ModelConfig mc = drift_model(ModelKind::DTam, sc.V, {});
  mc.trend = true;
  mc.dropout = 0.1;
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.batch_size = 16;
  tc.seed = 803;
  tc.deterministic = true;

  auto run = [&](const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto data = make_train_data<double>(sp.train, sp.split.val, mc.kind);
    auto res = train(Model<double>::init(mc, tc.seed), tc, data);
    save_checkpoint(dir / "ckpt", res.model, nullptr, nullptr, {{"best_epoch", std::to_string(res.best_epoch)}});
    ForecastConfig fc;
    fc.n_samples = 4;
    GaussianNoise<double> noise(804);
    const EvalReport rep = evaluate(res.model, data.W, data.first_index, sp.future, reference, fc, noise);
    rep.write(dir / "report.txt");
    rep.write_slices_csv(dir / "slices.csv");
    return res.model;
  };
  const fs::path a = scratch / "det_a", b = scratch / "det_b", resaved = scratch / "det_resaved";
  Model<double> trained = run(a);
  run(b);
  const std::string runs_diff = tree_difference(a, b);

  auto back = load_checkpoint<double>(a / "ckpt");
  const bool exact = bit_equal(trained, back.model);
  std::map<std::string, std::string> meta;
  for (const auto& [k, v] : back.meta)
    if (k.rfind("info.", 0) == 0) meta[k.substr(5)] = v;
  fs::remove_all(resaved);
  save_checkpoint(resaved, back.model, nullptr, nullptr, meta);
  const std::string resave_diff = tree_difference(a / "ckpt", resaved);
  for (const auto& p : {a, b, resaved}) fs::remove_all(p);

  auto show = [](const std::string& diff) { return diff.empty() ? std::string("yes") : "no (" + diff + ")"; };
  return {runs_diff.empty() && exact && resave_diff.empty(),
          "checkpoints and reports of two runs byte-identical: " + show(runs_diff) +
              "; load bit-exact: " + (exact ? "yes" : "no") + "; re-save byte-identical: " + show(resave_diff)};
}

// ---------------------------------------------------------------- 9: causality

Outcome causality(const fs::path& scratch) {
  long checked = 0, violations = 0;
  int datasets = 0;
  for (std::uint64_t seed : {901, 902, 903})
    for (int n_prediction : {20, 10}) {
      ScenarioConfig sc;
      sc.K = 3;
      sc.V = 60;
      sc.T = 30;
      sc.docs_per_slice = 15;
      sc.tokens_per_doc = 30;
      sc.dynamics = {Dynamics::Trend, Dynamics::Burst, Dynamics::Stationary};
      sc.rating_weights = {1.0, 0.0, 0.0};
      sc.seed = seed;
      std::vector<RawDocument> raw = to_raw_documents(sample_timeline(sc));
      // Spread timestamps over each week and shuffle the file order.
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<std::int64_t> jitter(0, sc.slice_seconds - 1);
      for (auto& r : raw) r.timestamp = truncate_to(r.timestamp, Granularity{}) + jitter(rng);
      std::shuffle(raw.begin(), raw.end(), rng);
      const fs::path path = scratch / "causality.jsonl";
      {
        std::ofstream out(path);
        write_jsonl(out, raw);
      }
      PrepConfig pc;
      pc.n_prediction = n_prediction;
      pc.min_df = 1;
      pc.seed = seed;
      const Dataset ds = prepare_dataset(ingest_jsonl(path, pc.filters), pc);
      fs::remove(path);
      ++datasets;
      std::int64_t latest_end = std::numeric_limits<std::int64_t>::min();
      for (std::size_t i = 0; i < ds.docs.size(); ++i)
        if (ds.splits[i] == Split::Train)
          latest_end = std::max(latest_end, ds.bounds[static_cast<std::size_t>(ds.docs[i].time_index)].second);
      for (std::size_t i = 0; i < ds.docs.size(); ++i)
        if (ds.splits[i] == Split::Future) {
          ++checked;
          if (ds.docs[i].timestamp < latest_end) ++violations;
        }
    }
  return {violations == 0 && checked > 0,
          fmt("%d datasets, %ld prediction documents, %ld before the end of a training slice", datasets, checked,
              violations)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite: one PASS/FAIL line per criterion"};
  std::vector<int> only;
  int seeds = 5;
  bool verbose = false;
  std::vector<std::string> model_set, train_set, scenario_set;
  std::string scratch = (fs::temp_directory_path() / "dtam_acceptance").string();
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--seeds", seeds, "Seeds for criteria 5 and 6")->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", verbose, "Training progress on stderr");
  app.add_option("--model", model_set, "Model override key=value for criteria 5 and 6");
  app.add_option("--train", train_set, "Train override key=value for criteria 5 and 6");
  app.add_option("--scenario", scenario_set, "Scenario override key=value for criteria 5 and 6");
  app.add_option("--scratch", scratch, "Scratch directory");
  CLI11_PARSE(app, argc, argv);

  DriftSetup setup;
  setup.verbose = verbose;
  for (const auto& s : model_set) setup.model_over.set(s);
  for (const auto& s : train_set) setup.train_over.set(s);
  for (const auto& s : scenario_set) setup.scenario_over.set(s);
  fs::create_directories(scratch);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, gradient_check},
      {2, probability_invariants},
      {3, likelihood_oracle},
      {4, elbo_bound},
      {5, [&] { return drift_criterion(true, seeds, setup); }},
      {6, [&] { return drift_criterion(false, seeds, setup); }},
      {7, metric_sanity},
      {8, [&] { return determinism(scratch); }},
      {9, [&] { return causality(scratch); }},
  };
  bool all = true;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
