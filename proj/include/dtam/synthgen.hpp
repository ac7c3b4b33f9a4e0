#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtam/config.hpp"
#include "dtam/corpus.hpp"

namespace dtam {

// Scripted eta_k(t) shapes; RandomWalk follows the prior's random walk.
enum class Dynamics { Trend, Seasonal, Burst, Stationary, RandomWalk };
std::string to_string(Dynamics d);
Dynamics parse_dynamics(const std::string& s);

struct ScenarioConfig {
  int K = 3;
  int V = 100;
  int E = 8;
  int T = 30;
  int docs_per_slice = 100;
  int tokens_per_doc = 50;
  std::vector<Dynamics> dynamics;       // per topic; empty = all stationary
  std::vector<double> rating_weights;   // v, one per topic; empty = zeros
  double rating_noise = 0.0;            // stddev of epsilon
  double amplitude = 2.0;               // scale of scripted eta shapes
  double period = 12.0;                 // seasonal period in slices
  double delta = 0.0;                   // eta noise stddev around the script
  double zeta_noise = 1.0;              // zeta ~ N(eta, zeta_noise^2 I)
  double embed_scale = 1.0;             // alpha, rho ~ N(0, embed_scale^2)
  std::int64_t origin = 1577664000;     // Monday 2019-12-30 00:00 UTC
  std::int64_t slice_seconds = 7 * 86400;
  std::uint64_t seed = 0;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static ScenarioConfig from_map(const KeyValues& kv, ScenarioConfig base);
  static ScenarioConfig from_map(const KeyValues& kv) { return from_map(kv, ScenarioConfig()); }
};

struct PlantedLatents {
  Eigen::MatrixXd eta;    // T x K, zeta mean per slice
  Eigen::MatrixXd beta;   // K x V
  Eigen::MatrixXd theta;  // N x K, documents in timeline order
  Eigen::VectorXd rating_weights;
};

struct SyntheticCorpus {
  CorpusTimeline timeline;  // TM ids are generator word ids; LM ids are word + 1
  PlantedLatents latents;
};

// eta_k(t) before noise for one dynamics kind.
double scripted_eta(Dynamics d, int t, int T, double amplitude, double period);

// Ancestral sampling: eta_t, zeta ~ N(eta_t, I), theta = softmax(zeta),
// z ~ Cat(theta), w ~ Cat(beta_z). Ratings are planted with plant_ratings.
SyntheticCorpus sample_timeline(const ScenarioConfig& cfg);

// r = clip(logistic(v . theta + eps), 0, 1), eps ~ N(0, noise_std^2).
void plant_ratings(CorpusTimeline& timeline, const PlantedLatents& latents, const Eigen::VectorXd& v, double noise_std,
                   std::uint64_t seed);

// Token string of a generator word id (letters only, survives tokenisation).
std::string synthetic_token(int id);

std::vector<RawDocument> to_raw_documents(const SyntheticCorpus& c);
void write_latents_json(const std::filesystem::path& path, const SyntheticCorpus& c, const ScenarioConfig& cfg);

}  // namespace dtam
