#include "dtam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "dtam/dtm.hpp"
#include "dtam/numcore/blob.hpp"

namespace dtam {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double r2(const std::vector<double>& pred, const std::vector<double>& target) {
  require_dims(pred.size() == target.size(), "r2: prediction / target size mismatch");
  if (target.size() < 2) throw DomainError("r2: need at least two targets");
  double mean = 0;
  for (double y : target) mean += y;
  mean /= static_cast<double>(target.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    ss_res += (target[i] - pred[i]) * (target[i] - pred[i]);
    ss_tot += (target[i] - mean) * (target[i] - mean);
  }
  if (ss_tot == 0) throw DomainError("r2: targets have zero variance");
  return 1.0 - ss_res / ss_tot;
}

std::vector<SliceScore> per_slice_r2(const std::vector<const Document*>& docs, const std::vector<double>& pred) {
  require_dims(docs.size() == pred.size(), "per_slice_r2: size mismatch");
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_slice;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    auto& [p, y] = by_slice[docs[i]->time_index];
    p.push_back(pred[i]);
    y.push_back(docs[i]->rating);
  }
  std::vector<SliceScore> out;
  double sum = 0;
  int finite = 0;
  for (const auto& [t, py] : by_slice) {
    SliceScore s;
    s.time_index = t;
    s.n = static_cast<int>(py.first.size());
    try {
      s.r2 = r2(py.first, py.second);
    } catch (const DomainError&) {
      s.r2 = kNaN;
    }
    if (std::isfinite(s.r2)) {
      sum += s.r2;
      ++finite;
    }
    s.cumulative_r2 = finite ? sum / finite : kNaN;
    out.push_back(s);
  }
  return out;
}

template <typename S>
double ppl_dc(Model<S>& m, const Mat<S>& W, int first_index, const std::vector<const Document*>& docs) {
  if (!m.cfg.has_topic_model()) throw UsageError("ppl_dc: model has no topic component");
  std::vector<Bow> first, second;
  std::vector<int> rows;
  int needed = 1;
  for (const auto* d : docs) {
    auto halves = completion_split(*d);
    if (!halves || halves->second.empty()) continue;
    first.push_back(std::move(halves->first));
    second.push_back(std::move(halves->second));
    rows.push_back(chain_row(m.cfg, first_index, d->time_index));
    needed = std::max(needed, rows.back() + 1);
  }
  if (rows.empty()) throw DataError("ppl_dc: no document has a non-empty second half");
  ZeroNoise<S> zero;
  const LatentPath<S> path = latent_path(m, W, needed, RolloutMode::Mean, zero);
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Mat<S> eta(n, path.eta.cols()), w1 = Mat<S>::Zero(n, m.cfg.V);
  for (Eigen::Index i = 0; i < n; ++i) {
    eta.row(i) = path.eta.row(rows[static_cast<std::size_t>(i)]);
    for (const auto& [v, c] : first[static_cast<std::size_t>(i)]) w1(i, v) += static_cast<S>(c);
    const S total = w1.row(i).sum();
    if (total > 0) w1.row(i) /= total;
  }
  Tape<S> t;
  Var<S> zeta = encode_local(t, m, t.constant(w1), t.constant(eta), zero).mean;
  const Mat<S> theta = decode(t, m, zeta).value();
  const Mat<S> beta = topic_word(t, m).value();
  double ll = 0, ntok = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Bow& b = second[static_cast<std::size_t>(i)];
    ll += static_cast<double>(bow_log_likelihood<S>(b, Vec<S>(theta.row(i).transpose()), beta));
    for (const auto& [v, c] : b) ntok += c;
  }
  return std::exp(-ll / ntok);
}

CoherenceResult npmi_coherence(const std::vector<std::vector<int>>& topics, const std::vector<const Bow*>& reference) {
  constexpr double eps = 1e-12;
  const double N = static_cast<double>(reference.size());
  if (reference.empty()) throw DataError("topic coherence: empty reference corpus");
  // Document frequency of every word that appears in some topic.
  std::unordered_map<int, std::vector<char>> present;
  for (const auto& words : topics)
    for (int w : words) present.emplace(w, std::vector<char>(reference.size(), 0));
  for (std::size_t d = 0; d < reference.size(); ++d)
    for (const auto& [v, c] : *reference[d]) {
      auto it = present.find(v);
      if (it != present.end() && c > 0) it->second[d] = 1;
    }
  auto df = [&](int w) {
    const auto& p = present.at(w);
    return static_cast<double>(std::count(p.begin(), p.end(), 1));
  };
  CoherenceResult res;
  double total = 0;
  int scored_topics = 0;
  for (const auto& words : topics) {
    double sum = 0;
    int pairs = 0;
    for (std::size_t i = 0; i < words.size(); ++i)
      for (std::size_t j = i + 1; j < words.size(); ++j) {
        const double di = df(words[i]), dj = df(words[j]);
        if (di == 0 || dj == 0) {
          ++res.pairs_skipped;
          continue;
        }
        const auto& pi = present.at(words[i]);
        const auto& pj = present.at(words[j]);
        double dij = 0;
        for (std::size_t d = 0; d < pi.size(); ++d) dij += pi[d] && pj[d];
        double npmi;
        if (dij == 0) {
          npmi = -1.0;
        } else if (dij == N) {
          npmi = 1.0;
        } else {
          const double pij = dij / N;
          npmi = std::log((pij + eps) / ((di / N) * (dj / N))) / -std::log(pij + eps);
        }
        sum += std::clamp(npmi, -1.0, 1.0);
        ++pairs;
      }
    res.pairs_scored += pairs;
    res.per_topic.push_back(pairs ? sum / pairs : kNaN);
    if (pairs) {
      total += sum / pairs;
      ++scored_topics;
    }
  }
  if (scored_topics == 0) throw DataError("topic coherence: no word pair occurs in the reference corpus");
  res.mean = total / scored_topics;
  return res;
}

template <typename S>
CoherenceResult topic_coherence(const Mat<S>& beta, const std::vector<const Document*>& reference, int top_n) {
  if (top_n < 2) throw UsageError("topic coherence: top_n must be >= 2");
  std::vector<const Bow*> bows;
  for (const auto* d : reference) bows.push_back(&d->bow);
  return npmi_coherence(top_words<S>(beta, top_n), bows);
}

std::string config_fingerprint(const ModelConfig& cfg) {
  std::string flat;
  for (const auto& [k, v] : cfg.to_map()) flat += k + "=" + v + "\n";
  return hex64(fnv1a64(flat));
}

std::map<std::string, std::string> EvalReport::to_map() const {
  return {{"r2", num(r2)},         {"ppl_dc", num(ppl_dc)},       {"ppl_p", num(ppl_p)},
          {"tc", num(tc)},         {"n_docs", std::to_string(n_docs)}, {"config_fingerprint", fingerprint}};
}

void EvalReport::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [k, v] : to_map()) out << k << " = " << v << '\n';
}

void EvalReport::write_slices_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "time_index,n,r2,cumulative_r2\n";
  for (const auto& s : slices) out << s.time_index << ',' << s.n << ',' << num(s.r2) << ',' << num(s.cumulative_r2) << '\n';
}

template <typename S>
EvalReport evaluate(Model<S>& m, const Mat<S>& W, int first_index, const std::vector<const Document*>& docs,
                    const std::vector<const Document*>& reference, const ForecastConfig& cfg, NoiseSource<S>& noise,
                    int top_n) {
  if (docs.empty()) throw DataError("evaluate: no documents to score");
  EvalReport rep;
  rep.n_docs = static_cast<int>(docs.size());
  rep.fingerprint = config_fingerprint(m.cfg);
  const ForecastResult fr = predict_future(m, W, first_index, docs, cfg, noise);
  std::vector<double> y;
  for (const auto* d : docs) y.push_back(d->rating);
  rep.r2 = r2(fr.mean, y);
  rep.slices = per_slice_r2(docs, fr.mean);
  if (m.cfg.has_topic_model()) {
    rep.ppl_dc = ppl_dc(m, W, first_index, docs);
    rep.ppl_p = ppl_p(m, W, first_index, docs, cfg, noise);
    Tape<S> t;
    rep.tc = topic_coherence<S>(topic_word(t, m).value(), reference, top_n).mean;
  } else {
    rep.ppl_dc = rep.ppl_p = rep.tc = kNaN;
  }
  return rep;
}

#define DTAM_INSTANTIATE(S)                                                                                         \
  template double ppl_dc<S>(Model<S>&, const Mat<S>&, int, const std::vector<const Document*>&);                   \
  template CoherenceResult topic_coherence<S>(const Mat<S>&, const std::vector<const Document*>&, int);           \
  template EvalReport evaluate<S>(Model<S>&, const Mat<S>&, int, const std::vector<const Document*>&,              \
                                  const std::vector<const Document*>&, const ForecastConfig&, NoiseSource<S>&, int);

DTAM_INSTANTIATE(float)
DTAM_INSTANTIATE(double)

#undef DTAM_INSTANTIATE

}  // namespace dtam
