#include "dtam/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dtam/errors.hpp"

namespace dtam {

std::string to_string(Dynamics d) {
  switch (d) {
    case Dynamics::Trend: return "trend";
    case Dynamics::Seasonal: return "seasonal";
    case Dynamics::Burst: return "burst";
    case Dynamics::Stationary: return "stationary";
    case Dynamics::RandomWalk: return "random_walk";
  }
  return "stationary";
}

Dynamics parse_dynamics(const std::string& s) {
  for (Dynamics d : {Dynamics::Trend, Dynamics::Seasonal, Dynamics::Burst, Dynamics::Stationary, Dynamics::RandomWalk})
    if (to_string(d) == s) return d;
  throw UsageError("unknown dynamics '" + s + "' (expected trend, seasonal, burst, stationary or random_walk)");
}

// ---------------------------------------------------------------- config

void ScenarioConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("scenario: " + what);
  };
  need(K >= 1 && V >= 2 && E >= 1 && T >= 1, "K, E, T must be >= 1 and V >= 2");
  need(docs_per_slice >= 1 && tokens_per_doc >= 1, "docs_per_slice and tokens_per_doc must be >= 1");
  need(dynamics.empty() || static_cast<int>(dynamics.size()) == K, "dynamics needs one entry per topic");
  need(rating_weights.empty() || static_cast<int>(rating_weights.size()) == K, "rating_weights needs K entries");
  need(rating_noise >= 0 && delta >= 0 && zeta_noise >= 0 && embed_scale > 0, "noise scales must be >= 0");
  need(period > 0, "period must be > 0");
  need(slice_seconds > 0, "slice_seconds must be > 0");
}

namespace {

template <typename T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::map<std::string, std::string> ScenarioConfig::to_map() const {
  return {{"K", std::to_string(K)},
          {"V", std::to_string(V)},
          {"E", std::to_string(E)},
          {"T", std::to_string(T)},
          {"docs_per_slice", std::to_string(docs_per_slice)},
          {"tokens_per_doc", std::to_string(tokens_per_doc)},
          {"dynamics", join<Dynamics>(dynamics, [](const Dynamics& d) { return to_string(d); })},
          {"rating_weights", join<double>(rating_weights, [](const double& v) { return num(v); })},
          {"rating_noise", num(rating_noise)},
          {"amplitude", num(amplitude)},
          {"period", num(period)},
          {"delta", num(delta)},
          {"zeta_noise", num(zeta_noise)},
          {"embed_scale", num(embed_scale)},
          {"origin", std::to_string(origin)},
          {"slice_seconds", std::to_string(slice_seconds)},
          {"seed", std::to_string(seed)}};
}

ScenarioConfig ScenarioConfig::from_map(const KeyValues& kv, ScenarioConfig c) {
  const auto known = c.to_map();
  for (const auto& [k, v] : kv.values)
    if (!known.count(k)) throw UsageError("unknown scenario setting '" + k + "'");
  c.K = static_cast<int>(kv.get_int("K", c.K));
  c.V = static_cast<int>(kv.get_int("V", c.V));
  c.E = static_cast<int>(kv.get_int("E", c.E));
  c.T = static_cast<int>(kv.get_int("T", c.T));
  c.docs_per_slice = static_cast<int>(kv.get_int("docs_per_slice", c.docs_per_slice));
  c.tokens_per_doc = static_cast<int>(kv.get_int("tokens_per_doc", c.tokens_per_doc));
  if (kv.has("dynamics")) {
    c.dynamics.clear();
    for (const auto& s : split_list(kv.get("dynamics", ""))) c.dynamics.push_back(parse_dynamics(s));
  }
  if (kv.has("rating_weights")) {
    c.rating_weights.clear();
    KeyValues one;
    for (const auto& s : split_list(kv.get("rating_weights", ""))) {
      one.values["x"] = s;
      c.rating_weights.push_back(one.get_double("x", 0));
    }
  }
  c.rating_noise = kv.get_double("rating_noise", c.rating_noise);
  c.amplitude = kv.get_double("amplitude", c.amplitude);
  c.period = kv.get_double("period", c.period);
  c.delta = kv.get_double("delta", c.delta);
  c.zeta_noise = kv.get_double("zeta_noise", c.zeta_noise);
  c.embed_scale = kv.get_double("embed_scale", c.embed_scale);
  c.origin = kv.get_int("origin", c.origin);
  c.slice_seconds = kv.get_int("slice_seconds", c.slice_seconds);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  return c;
}

// ---------------------------------------------------------------- sampling

double scripted_eta(Dynamics d, int t, int T, double amplitude, double period) {
  const double pos = T > 1 ? static_cast<double>(t) / (T - 1) : 0.0;
  switch (d) {
    case Dynamics::Trend: return amplitude * (2.0 * pos - 1.0);
    case Dynamics::Seasonal: return amplitude * std::sin(2.0 * std::numbers::pi * t / period);
    case Dynamics::Burst: {
      const double centre = 0.6 * (T - 1), width = std::max(1.0, T / 15.0);
      return amplitude * (2.0 * std::exp(-0.5 * (t - centre) * (t - centre) / (width * width)) - 1.0);
    }
    case Dynamics::Stationary:
    case Dynamics::RandomWalk: return 0.0;
  }
  return 0.0;
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                  static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(s);
}

Eigen::VectorXd softmax_vec(const Eigen::VectorXd& x) {
  Eigen::VectorXd e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

SyntheticCorpus sample_timeline(const ScenarioConfig& cfg) {
  cfg.validate();
  const int K = cfg.K, V = cfg.V, T = cfg.T;
  SyntheticCorpus out;
  PlantedLatents& lat = out.latents;

  // beta = rowwise-softmax(alpha rho^T).
  {
    auto rng = stream(cfg.seed, 1);
    std::normal_distribution<double> g(0.0, cfg.embed_scale);
    Eigen::MatrixXd alpha(K, cfg.E), rho(V, cfg.E);
    for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < rho.size(); ++i) rho.data()[i] = g(rng);
    lat.beta = alpha * rho.transpose();
    for (int k = 0; k < K; ++k) lat.beta.row(k) = softmax_vec(lat.beta.row(k).transpose()).transpose();
  }

  // eta trajectories.
  lat.eta.resize(T, K);
  {
    auto rng = stream(cfg.seed, 2);
    std::normal_distribution<double> g;
    const double walk_sd = cfg.amplitude / std::sqrt(static_cast<double>(std::max(T, 1)));
    for (int k = 0; k < K; ++k) {
      const Dynamics d = cfg.dynamics.empty() ? Dynamics::Stationary : cfg.dynamics[static_cast<std::size_t>(k)];
      double walk = 0;
      for (int t = 0; t < T; ++t) {
        if (d == Dynamics::RandomWalk && t > 0) walk += walk_sd * g(rng);
        lat.eta(t, k) = scripted_eta(d, t, T, cfg.amplitude, cfg.period) + walk + cfg.delta * g(rng);
      }
    }
  }

  std::vector<std::discrete_distribution<int>> words;
  for (int k = 0; k < K; ++k) {
    const Eigen::VectorXd row = lat.beta.row(k).transpose();
    words.emplace_back(row.data(), row.data() + V);
  }

  out.timeline.V = V;
  lat.theta.resize(static_cast<Eigen::Index>(T) * cfg.docs_per_slice, K);
  Eigen::Index row = 0;
  for (int t = 0; t < T; ++t) {
    auto rng = stream(cfg.seed, 3, static_cast<std::uint64_t>(t));
    std::normal_distribution<double> g;
    Slice s;
    s.index = t;
    s.begin = cfg.origin + t * cfg.slice_seconds;
    s.end = s.begin + cfg.slice_seconds;
    for (int i = 0; i < cfg.docs_per_slice; ++i) {
      Eigen::VectorXd zeta(K);
      for (int k = 0; k < K; ++k) zeta(k) = lat.eta(t, k) + cfg.zeta_noise * g(rng);
      const Eigen::VectorXd theta = softmax_vec(zeta);
      lat.theta.row(row++) = theta.transpose();
      std::discrete_distribution<int> topic(theta.data(), theta.data() + K);
      Document d;
      d.id = "s" + std::to_string(t) + "_" + std::to_string(i);
      d.time_index = t;
      d.timestamp = s.begin + (static_cast<std::int64_t>(i) + 1) * cfg.slice_seconds / (cfg.docs_per_slice + 1);
      for (int j = 0; j < cfg.tokens_per_doc; ++j) {
        const int w = words[static_cast<std::size_t>(topic(rng))](rng);
        d.tm_ids.push_back(w);
        d.lm_ids.push_back(w + 1);
      }
      d.bow = bow_from_ids(d.tm_ids);
      s.docs.push_back(std::move(d));
    }
    out.timeline.slices.push_back(std::move(s));
  }
  out.timeline.recompute_bows();

  Eigen::VectorXd v = Eigen::VectorXd::Zero(K);
  for (std::size_t k = 0; k < cfg.rating_weights.size(); ++k) v(static_cast<Eigen::Index>(k)) = cfg.rating_weights[k];
  lat.rating_weights = v;
  plant_ratings(out.timeline, lat, v, cfg.rating_noise, cfg.seed);
  return out;
}

void plant_ratings(CorpusTimeline& timeline, const PlantedLatents& latents, const Eigen::VectorXd& v, double noise_std,
                   std::uint64_t seed) {
  require_dims(v.size() == latents.theta.cols(), "plant_ratings: weight vector length != K");
  auto rng = stream(seed, 4);
  std::normal_distribution<double> g;
  Eigen::Index row = 0;
  for (auto& s : timeline.slices)
    for (auto& d : s.docs) {
      require_dims(row < latents.theta.rows(), "plant_ratings: more documents than latent rows");
      const double eps = noise_std > 0 ? noise_std * g(rng) : 0.0;
      const double x = latents.theta.row(row++).dot(v) + eps;
      d.rating = std::clamp(1.0 / (1.0 + std::exp(-x)), 0.0, 1.0);
      d.raw_label = d.rating;
    }
}

std::string synthetic_token(int id) {
  std::string s = "zq";
  std::string letters;
  do {
    letters.push_back(static_cast<char>('a' + id % 26));
    id /= 26;
  } while (id > 0);
  while (letters.size() < 2) letters.push_back('a');
  s.append(letters.rbegin(), letters.rend());
  return s;
}

std::vector<RawDocument> to_raw_documents(const SyntheticCorpus& c) {
  std::vector<RawDocument> out;
  for (const auto& s : c.timeline.slices)
    for (const auto& d : s.docs) {
      RawDocument r;
      r.id = d.id;
      r.timestamp = d.timestamp;
      r.label = d.raw_label;
      for (std::size_t j = 0; j < d.tm_ids.size(); ++j) r.text += (j ? " " : "") + synthetic_token(d.tm_ids[j]);
      out.push_back(std::move(r));
    }
  return out;
}

void write_latents_json(const std::filesystem::path& path, const SyntheticCorpus& c, const ScenarioConfig& cfg) {
  using nlohmann::json;
  auto rows = [](const Eigen::MatrixXd& m) {
    json a = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      json r = json::array();
      for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
      a.push_back(std::move(r));
    }
    return a;
  };
  json j;
  j["scenario"] = cfg.to_map();
  j["eta"] = rows(c.latents.eta);
  j["beta"] = rows(c.latents.beta);
  j["rating_weights"] = std::vector<double>(c.latents.rating_weights.data(),
                                            c.latents.rating_weights.data() + c.latents.rating_weights.size());
  json docs = json::array();
  Eigen::Index row = 0;
  for (const auto& s : c.timeline.slices)
    for (const auto& d : s.docs) {
      std::vector<double> th(static_cast<std::size_t>(c.latents.theta.cols()));
      for (Eigen::Index k = 0; k < c.latents.theta.cols(); ++k) th[static_cast<std::size_t>(k)] = c.latents.theta(row, k);
      ++row;
      docs.push_back({{"id", d.id}, {"time_index", d.time_index}, {"theta", th}, {"rating", d.rating}});
    }
  j["docs"] = std::move(docs);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump() << '\n';
}

}  // namespace dtam
