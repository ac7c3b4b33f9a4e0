#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dtam/forecast.hpp"
#include "dtam/model.hpp"

namespace dtam {

// 1 - SS_res / SS_tot. DomainError for n < 2 or constant targets.
double r2(const std::vector<double>& pred, const std::vector<double>& target);

struct SliceScore {
  int time_index = 0;
  int n = 0;
  double r2 = 0;             // NaN when the slice has < 2 docs or constant targets
  double cumulative_r2 = 0;  // mean of the finite per-slice values so far
};

// Per-slice R^2 in ascending slice order.
std::vector<SliceScore> per_slice_r2(const std::vector<const Document*>& docs, const std::vector<double>& pred);

// exp(-sum_d log p(w2_d | theta_d, beta) / sum_d |w2_d|) with theta_d decoded
// from the posterior mean of zeta given the first half w1_d and the mean chain
// state at the document's slice. Documents shorter than two tokens are skipped.
template <typename S>
double ppl_dc(Model<S>& m, const Mat<S>& W, int first_index, const std::vector<const Document*>& docs);

struct CoherenceResult {
  double mean = 0;                 // over topics with at least one scored pair
  std::vector<double> per_topic;   // NaN for topics with no scored pair
  int pairs_scored = 0;
  int pairs_skipped = 0;
};

// NPMI over unordered pairs of each topic's top_n words with document-level
// co-occurrence. Pairs involving a word absent from the reference are skipped.
CoherenceResult npmi_coherence(const std::vector<std::vector<int>>& topics, const std::vector<const Bow*>& reference);

template <typename S>
CoherenceResult topic_coherence(const Mat<S>& beta, const std::vector<const Document*>& reference, int top_n = 10);

struct EvalReport {
  double r2 = 0;
  double ppl_dc = 0;
  double ppl_p = 0;
  double tc = 0;
  int n_docs = 0;
  std::vector<SliceScore> slices;
  std::string fingerprint;  // FNV-1a of the model configuration

  // key = value lines; NaN for metrics the model kind does not support.
  void write(const std::filesystem::path& path) const;
  // time_index,n,r2,cumulative_r2
  void write_slices_csv(const std::filesystem::path& path) const;
  std::map<std::string, std::string> to_map() const;
};

std::string config_fingerprint(const ModelConfig& cfg);

// Scores documents beyond the history window W: R^2 of predict_future
// (per cfg), PPL-DC and PPL-P on the same documents, TC against reference.
template <typename S>
EvalReport evaluate(Model<S>& m, const Mat<S>& W, int first_index, const std::vector<const Document*>& docs,
                    const std::vector<const Document*>& reference, const ForecastConfig& cfg, NoiseSource<S>& noise,
                    int top_n = 10);

}  // namespace dtam
