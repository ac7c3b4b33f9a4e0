#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtam/model.hpp"

namespace dtam {

enum class RolloutMode { Mean, Sampled };
std::string to_string(RolloutMode m);
RolloutMode parse_rollout_mode(const std::string& s);

struct ForecastConfig {
  int n_samples = 32;
  // Mean: one deterministic pass through posterior means, transition means
  // and prior means. Sampled: n_samples Monte-Carlo draws of everything.
  RolloutMode mode = RolloutMode::Sampled;
  void validate() const;
};

// N x d: z_{T+1..T+N} from z_T by iterating transition; Sampled adds
// exp(logstd) * noise at each step.
template <typename S>
Mat<S> rollout(const Vec<S>& z_T, int N, MlpParams<S>& transition, S logstd, RolloutMode mode, NoiseSource<S>& noise);

template <typename S>
Mat<S> rollout_eta(const Vec<S>& eta_T, int N, GenerativeParams<S>& gen, RolloutMode mode, NoiseSource<S>& noise);

// One draw of the latent chains over the history window followed by a prior
// rollout, covering chain rows [0, rows). xi is empty without the trend
// extension. The static model has a single row and no dynamics.
template <typename S>
struct LatentPath {
  Mat<S> eta, xi;
};

template <typename S>
LatentPath<S> latent_path(Model<S>& m, const Mat<S>& W, int rows, RolloutMode mode, NoiseSource<S>& noise);

// Chain row of a document at absolute slice `time_index` for a chain whose
// row 0 is `first_index`. DataError for documents before the chain.
int chain_row(const ModelConfig& cfg, int first_index, int time_index);

struct ForecastResult {
  std::vector<double> mean, stddev;  // per document, scaled rating units
};

// Ratings for documents at or beyond the end of the history window W.
template <typename S>
ForecastResult predict_future(Model<S>& m, const Mat<S>& W, int first_index, const std::vector<const Document*>& docs,
                              const ForecastConfig& cfg, NoiseSource<S>& noise);

// exp(-E[sum_d log p(w_d | zeta_d, beta)] / Ntok) with eta drawn from the
// history posterior, rolled out with the prior transition, and zeta drawn from
// its prior at each document's slice.
template <typename S>
double ppl_p(Model<S>& m, const Mat<S>& W, int first_index, const std::vector<const Document*>& docs,
             const ForecastConfig& cfg, NoiseSource<S>& noise);

// doc_id,time_index,r_hat_mean,r_hat_std,r_true. With a scaler, values are
// mapped back to the original label scale. r_true is left empty unless
// with_truth.
void write_predictions_csv(const std::filesystem::path& path, const std::vector<const Document*>& docs,
                           const ForecastResult& r, const LabelScaler* scaler, bool with_truth);

}  // namespace dtam
