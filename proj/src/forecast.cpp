#include "dtam/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace dtam {

std::string to_string(RolloutMode m) { return m == RolloutMode::Mean ? "mean" : "sampled"; }

RolloutMode parse_rollout_mode(const std::string& s) {
  if (s == "mean") return RolloutMode::Mean;
  if (s == "sampled") return RolloutMode::Sampled;
  throw UsageError("unknown rollout mode '" + s + "' (expected mean or sampled)");
}

void ForecastConfig::validate() const {
  if (n_samples < 1) throw UsageError("forecast: n_samples must be >= 1");
}

template <typename S>
Mat<S> rollout(const Vec<S>& z_T, int N, MlpParams<S>& transition, S logstd, RolloutMode mode, NoiseSource<S>& noise) {
  require_dims(z_T.size() == transition.input_size(), "rollout: state dimension mismatch");
  const Eigen::Index d = z_T.size();
  Mat<S> out(std::max(N, 0), d);
  Mat<S> prev = z_T.transpose();
  const S sd = std::exp(logstd);
  for (int i = 0; i < N; ++i) {
    Mat<S> next = mlp_apply<S>(transition, prev);
    if (mode == RolloutMode::Sampled) next += sd * noise.normal(1, d);
    out.row(i) = next;
    prev = next;
  }
  return out;
}

template <typename S>
Mat<S> rollout_eta(const Vec<S>& eta_T, int N, GenerativeParams<S>& gen, RolloutMode mode, NoiseSource<S>& noise) {
  return rollout<S>(eta_T, N, gen.eta_transition, gen.transition_logstd(), mode, noise);
}

namespace {

template <typename S>
Mat<S> extend(const Mat<S>& chain, int rows, MlpParams<S>& transition, S logstd, RolloutMode mode,
              NoiseSource<S>& noise) {
  const int T = static_cast<int>(chain.rows());
  if (rows <= T) return chain.topRows(std::max(rows, 0));
  Mat<S> out(rows, chain.cols());
  out.topRows(T) = chain;
  out.bottomRows(rows - T) = rollout<S>(chain.row(T - 1).transpose(), rows - T, transition, logstd, mode, noise);
  return out;
}

}  // namespace

template <typename S>
LatentPath<S> latent_path(Model<S>& m, const Mat<S>& W, int rows, RolloutMode mode, NoiseSource<S>& noise) {
  LatentPath<S> p;
  if (!m.cfg.has_topic_model()) return p;
  ZeroNoise<S> zero;
  NoiseSource<S>& nz = mode == RolloutMode::Mean ? static_cast<NoiseSource<S>&>(zero) : noise;
  if (m.cfg.kind == ModelKind::StaticTam) rows = 1;
  Tape<S> t;
  p.eta = extend<S>(encode_global(t, m, W, nz).z.value(), rows, m.gen.eta_transition, m.gen.transition_logstd(), mode,
                    nz);
  if (m.trend) {
    const S logstd =
        static_cast<S>(m.cfg.delta_is_variance ? 0.5 * std::log(m.trend->delta_xi) : std::log(m.trend->delta_xi));
    p.xi = extend<S>(encode_xi(t, m, W, nz).z.value(), rows, m.trend->xi_transition, logstd, mode, nz);
  }
  return p;
}

int chain_row(const ModelConfig& cfg, int first_index, int time_index) {
  const int r = time_index - first_index;
  if (r < 0)
    throw DataError("document at slice " + std::to_string(time_index) + " precedes the history window starting at " +
                    std::to_string(first_index));
  return cfg.kind == ModelKind::StaticTam ? 0 : r;
}

namespace {

struct Rows {
  std::vector<int> rows;
  int needed = 1;
};

template <typename S>
Rows doc_rows(const Model<S>& m, int first_index, const std::vector<const Document*>& docs) {
  Rows r;
  for (const auto* d : docs) {
    r.rows.push_back(chain_row(m.cfg, first_index, d->time_index));
    r.needed = std::max(r.needed, r.rows.back() + 1);
  }
  return r;
}

template <typename S>
Mat<S> gather(const Mat<S>& chain, const std::vector<int>& rows) {
  Mat<S> out(static_cast<Eigen::Index>(rows.size()), chain.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = chain.row(rows[i]);
  return out;
}

}  // namespace

template <typename S>
ForecastResult predict_future(Model<S>& m, const Mat<S>& W, int first_index, const std::vector<const Document*>& docs,
                              const ForecastConfig& cfg, NoiseSource<S>& noise) {
  cfg.validate();
  const std::size_t n = docs.size();
  ForecastResult res{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  if (n == 0) return res;
  const Rows r = doc_rows(m, first_index, docs);
  const ZetaSource src = m.cfg.condition_future_bow ? ZetaSource::Posterior : ZetaSource::Prior;
  ZeroNoise<S> zero;
  const bool sampled = cfg.mode == RolloutMode::Sampled;
  NoiseSource<S>& nz = sampled ? noise : static_cast<NoiseSource<S>&>(zero);
  const int S_count = sampled ? cfg.n_samples : 1;
  // Welford accumulation in sample order.
  std::vector<double> m2(n, 0.0);
  for (int s = 0; s < S_count; ++s) {
    LatentPath<S> p = latent_path(m, W, r.needed, cfg.mode, nz);
    Mat<S> eta = m.cfg.has_topic_model() ? gather<S>(p.eta, r.rows) : Mat<S>();
    Mat<S> xi = m.trend ? gather<S>(p.xi, r.rows) : Mat<S>();
    Vec<S> y = readout(m, eta, m.trend ? &xi : nullptr, docs, src, nz);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = static_cast<double>(y(static_cast<Eigen::Index>(i)));
      const double delta = v - res.mean[i];
      res.mean[i] += delta / (s + 1);
      m2[i] += delta * (v - res.mean[i]);
    }
  }
  if (S_count > 1)
    for (std::size_t i = 0; i < n; ++i) res.stddev[i] = std::sqrt(m2[i] / (S_count - 1));
  return res;
}

template <typename S>
double ppl_p(Model<S>& m, const Mat<S>& W, int first_index, const std::vector<const Document*>& docs,
             const ForecastConfig& cfg, NoiseSource<S>& noise) {
  cfg.validate();
  if (!m.cfg.has_topic_model()) throw UsageError("ppl_p: model has no topic component");
  double ntok = 0;
  for (const auto* d : docs)
    for (const auto& [v, c] : d->bow) ntok += c;
  if (ntok <= 0) throw DataError("ppl_p: future slice has no tokens");
  const Rows r = doc_rows(m, first_index, docs);
  ZeroNoise<S> zero;
  const bool sampled = cfg.mode == RolloutMode::Sampled;
  NoiseSource<S>& nz = sampled ? noise : static_cast<NoiseSource<S>&>(zero);
  const int S_count = sampled ? cfg.n_samples : 1;
  const Mat<S> counts = bow_matrix<S>(docs, m.cfg.V, false);
  Mat<S> beta;
  {
    Tape<S> t;
    beta = topic_word(t, m).value();
  }
  double mean_ll = 0;
  for (int s = 0; s < S_count; ++s) {
    LatentPath<S> p = latent_path(m, W, r.needed, cfg.mode, nz);
    Tape<S> t;
    Var<S> mu = zeta_prior_mean(t, m, t.constant(gather<S>(p.eta, r.rows)));
    Var<S> zeta = add(mu, t.constant(nz.normal(mu.rows(), mu.cols())));
    const Mat<S> probs = (decode(t, m, zeta).value() * beta).array().max(S(1e-12)).log().matrix();
    const double ll = static_cast<double>(counts.cwiseProduct(probs).sum());
    mean_ll += (ll - mean_ll) / (s + 1);
  }
  return std::exp(-mean_ll / ntok);
}

void write_predictions_csv(const std::filesystem::path& path, const std::vector<const Document*>& docs,
                           const ForecastResult& r, const LabelScaler* scaler, bool with_truth) {
  require_dims(r.mean.size() == docs.size() && r.stddev.size() == docs.size(), "predictions: size mismatch");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const double span = scaler ? scaler->max - scaler->min : 1.0;
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "doc_id,time_index,r_hat_mean,r_hat_std,r_true\n";
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const double mean = scaler ? scaler->inverse(r.mean[i]) : r.mean[i];
    const double truth = scaler ? scaler->inverse(docs[i]->rating) : docs[i]->rating;
    out << docs[i]->id << ',' << docs[i]->time_index << ',' << num(mean) << ',' << num(r.stddev[i] * span) << ','
        << (with_truth ? num(truth) : "") << '\n';
  }
}

#define DTAM_INSTANTIATE(S)                                                                                          \
  template Mat<S> rollout<S>(const Vec<S>&, int, MlpParams<S>&, S, RolloutMode, NoiseSource<S>&);                  \
  template Mat<S> rollout_eta<S>(const Vec<S>&, int, GenerativeParams<S>&, RolloutMode, NoiseSource<S>&);          \
  template LatentPath<S> latent_path<S>(Model<S>&, const Mat<S>&, int, RolloutMode, NoiseSource<S>&);              \
  template ForecastResult predict_future<S>(Model<S>&, const Mat<S>&, int, const std::vector<const Document*>&,    \
                                            const ForecastConfig&, NoiseSource<S>&);                                \
  template double ppl_p<S>(Model<S>&, const Mat<S>&, int, const std::vector<const Document*>&, const ForecastConfig&, \
                           NoiseSource<S>&);

DTAM_INSTANTIATE(float)
DTAM_INSTANTIATE(double)

#undef DTAM_INSTANTIATE

}  // namespace dtam
