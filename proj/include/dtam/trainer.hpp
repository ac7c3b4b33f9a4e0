#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dtam/config.hpp"
#include "dtam/corpus.hpp"
#include "dtam/model.hpp"

namespace dtam {

enum class OptimizerKind { Adam, Sgd };
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 5;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double clip_norm = 5.0;  // <= 0 disables clipping
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int kl_warmup_epochs = 0;  // linear KL warm-up; 0 = off
  std::uint64_t seed = 0;
  bool deterministic = false;  // history carries no wall-clock time
  std::string glove_path;      // optional word-embedding file for rho

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static TrainConfig from_map(const KeyValues& kv, TrainConfig base);
  static TrainConfig from_map(const KeyValues& kv) { return from_map(kv, TrainConfig()); }
};

struct EpochStats {
  int epoch = 0;
  double loss = 0;       // mean minibatch objective (not exported)
  double recon = 0;      // mean per-document log-likelihood
  double kl_local = 0;   // mean per document
  double kl_global = 0;  // per epoch-average chain KL
  double reg_loss = 0;   // mean batch RMSE
  double val_rmse = 0;
  double seconds = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  void write_csv(const std::filesystem::path& path) const;
};

// Chain input and document lists for one training run. Rows index the chain
// (relative slice); the static model collapses history into one slice.
template <typename S>
struct TrainData {
  Mat<S> W;
  std::vector<const Document*> train, val;
  std::vector<int> train_rows, val_rows;
  int first_index = 0;  // absolute slice of chain row 0
};

// history: train-split timeline over the history window. val docs must lie
// inside it.
template <typename S>
TrainData<S> make_train_data(const CorpusTimeline& history, const std::vector<Document>& val, ModelKind kind);

// Chain input alone: T x V normalised slice BoWs, or 1 x V for the static model.
template <typename S>
Mat<S> chain_input(const CorpusTimeline& history, ModelKind kind);

template <typename S>
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}
  // Clips by global norm, then updates every parameter from its grad. Returns
  // the pre-clip gradient norm.
  double step(const NamedParams<S>& params);

 private:
  TrainConfig cfg_;
  std::vector<Mat<S>> m_, v_;
  long long t_ = 0;
};

template <typename S>
struct TrainResult {
  Model<S> model;  // best-validation parameters
  TrainHistory history;
  int best_epoch = 0;  // 0: initialization
  double best_val_rmse = 0;
  bool diverged = false;
  std::string message;
};

// RMSE of in-window predictions.
template <typename S>
double validation_rmse(Model<S>& m, const TrainData<S>& data);

template <typename S>
TrainResult<S> train(Model<S> model, const TrainConfig& cfg, const TrainData<S>& data,
                     const std::function<void(const EpochStats&)>& on_epoch = {});

// Loads a GloVe-format text file ("token v1 v2 ...") into rows of rho for the
// tokens it covers. Returns the number of rows set.
template <typename S>
int load_glove(const std::filesystem::path& path, const Vocabulary& vocab, Param<S>& rho);

// ---------------------------------------------------------------- grid search

// Cartesian product over "model.*" / "train.*" keys.
struct GridSpace {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  std::vector<KeyValues> cells() const;
  static GridSpace from_map(const KeyValues& kv);  // values are comma lists
  // lr {1e-3, 5e-4}, batch {32, 128}, alpha_y {1, 100, 500, 1000}, K {25, 50, 100}.
  static GridSpace defaults();
};

struct LeaderboardRow {
  int cell = 0;
  KeyValues settings;
  double val_rmse = 0;
  int best_epoch = 0;
  bool diverged = false;
};

struct GridResult {
  std::vector<LeaderboardRow> leaderboard;  // best first
  ModelConfig best_model;
  TrainConfig best_train;
  void write_csv(const std::filesystem::path& path) const;
};

// Trains every cell from (base_model, base_train) with the cell's overrides,
// spreading cells over `threads` workers. Rows do not depend on the thread count.
GridResult grid_search(const GridSpace& space, const ModelConfig& base_model, const TrainConfig& base_train,
                       const CorpusTimeline& history, const std::vector<Document>& val,
                       const std::function<void(const LeaderboardRow&)>& on_cell = {}, int threads = 1);

}  // namespace dtam
