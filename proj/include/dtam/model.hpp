#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dtam/config.hpp"
#include "dtam/corpus.hpp"
#include "dtam/numcore/blob.hpp"
#include "dtam/numcore/grad_check.hpp"
#include "dtam/numcore/nn.hpp"
#include "dtam/numcore/prob.hpp"

namespace dtam {

// Row-batch layout throughout: a batch of n vectors is an (n x d) matrix and
// linear maps are stored (in x out), so W^zeta below is dim(eta) x dim(zeta).

template <typename S>
struct GenerativeParams {
  Param<S> alpha;                  // K x E topic embeddings
  Param<S> rho;                    // V x E word embeddings
  MlpParams<S> eta_transition;     // dim(eta) -> dim(eta)
  Param<S> zeta_w;                 // dim(eta) x dim(zeta)
  Param<S> zeta_c;                 // 1 x dim(zeta)
  MlpParams<S> theta_decoder;      // dim(zeta) -> K
  double delta_tr = 0.2;
  bool delta_is_variance = false;

  // log of the transition stddev implied by delta_tr.
  S transition_logstd() const {
    return static_cast<S>(delta_is_variance ? 0.5 * std::log(delta_tr) : std::log(delta_tr));
  }

  template <typename F>
  void visit(F&& f) {
    f("gen.alpha", alpha);
    f("gen.rho", rho);
    eta_transition.visit("gen.eta_transition", f);
    f("gen.zeta_w", zeta_w);
    f("gen.zeta_c", zeta_c);
    theta_decoder.visit("gen.theta_decoder", f);
  }
};

template <typename S>
struct InferenceParams {
  MlpParams<S> local_mean;     // V + dim(eta) -> dim(zeta)
  MlpParams<S> local_logstd;
  MlpParams<S> global_mean;    // dim(eta) + H -> dim(eta)
  MlpParams<S> global_logstd;
  RecurrentParams<S> bow_recurrence;  // V -> H

  template <typename F>
  void visit(F&& f) {
    local_mean.visit("inf.local_mean", f);
    local_logstd.visit("inf.local_logstd", f);
    global_mean.visit("inf.global_mean", f);
    global_logstd.visit("inf.global_logstd", f);
    bow_recurrence.visit("inf.bow_recurrence", f);
  }
};

template <typename S>
struct TrendParams {
  MlpParams<S> xi_transition;  // dim(xi) -> dim(xi)
  double delta_xi = 0.1;
  MlpParams<S> xi_mean;        // dim(xi) + H -> dim(xi)
  MlpParams<S> xi_logstd;
  RecurrentParams<S> xi_recurrence;
  Param<S> ma_q;  // dim(xi) x E
  Param<S> ma_k;  // E x E
  Param<S> ma_v;  // E x E
  Param<S> mu_q;  // E x E
  Param<S> mu_k;  // H_word x E
  Param<S> mu_v;  // H_word x H_word
  bool gate_clamp = false;
  bool residual_outside = false;

  template <typename F>
  void visit(F&& f) {
    xi_transition.visit("trend.xi_transition", f);
    xi_mean.visit("trend.xi_mean", f);
    xi_logstd.visit("trend.xi_logstd", f);
    xi_recurrence.visit("trend.xi_recurrence", f);
    f("trend.ma_q", ma_q);
    f("trend.ma_k", ma_k);
    f("trend.ma_v", ma_v);
    f("trend.mu_q", mu_q);
    f("trend.mu_k", mu_k);
    f("trend.mu_v", mu_v);
  }
};

template <typename S>
struct AttentionRegressorParams {
  Param<S> lm_embeddings;          // lm_vocab x E_lm
  RecurrentParams<S> word_encoder; // E_lm -> H_word
  MlpParams<S> query_mlp;          // H_word -> E
  double delta_att = 0.2;
  MlpParams<S> regressor;          // dim(s) -> 1
  double alpha_y = 1.0;
  MlpParams<S> bow_encoder;        // MLP baseline only: V -> repr

  template <typename F>
  void visit(F&& f) {
    f("att.lm_embeddings", lm_embeddings);
    word_encoder.visit("att.word_encoder", f);
    query_mlp.visit("att.query_mlp", f);
    regressor.visit("att.regressor", f);
    bow_encoder.visit("att.bow_encoder", f);
  }
};

template <typename S>
struct Model {
  ModelConfig cfg;  // resolved
  GenerativeParams<S> gen;
  InferenceParams<S> inf;
  AttentionRegressorParams<S> att;
  std::optional<TrendParams<S>> trend;

  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  // Visits every allocated tensor in a fixed order. Empty tensors are skipped.
  template <typename F>
  void visit(F&& f) {
    auto g = [&f](const std::string& name, Param<S>& p) {
      if (p.value.size() > 0) f(name, p);
    };
    gen.visit(g);
    inf.visit(g);
    att.visit(g);
    if (trend) trend->visit(g);
  }

  NamedParams<S> named();
  std::size_t num_parameters();
  void zero_grad();
};

// ---------------------------------------------------------------- passes on a tape

// Posterior chain over a slice sequence, shared by eta and the trend state xi.
template <typename S>
struct ChainPass {
  Var<S> z;       // T x d samples
  Var<S> mean;    // T x d
  Var<S> logstd;  // T x d
  Var<S> kl;      // KL(q_1 || N(0,I)) + sum_{t>=2} KL(q_t || p(.|z_{t-1}))
  Var<S> h;       // T x H recurrent states
};

// W: T x V L1-normalised slice BoWs.
template <typename S>
ChainPass<S> encode_global(Tape<S>& t, Model<S>& m, const Mat<S>& W, NoiseSource<S>& noise);

template <typename S>
ChainPass<S> encode_xi(Tape<S>& t, Model<S>& m, const Mat<S>& W, NoiseSource<S>& noise);

template <typename S>
struct LocalPass {
  Var<S> mean, logstd, zeta;  // B x dim(zeta)
  Var<S> kl;                  // summed over the batch
};

template <typename S>
LocalPass<S> encode_local(Tape<S>& t, Model<S>& m, Var<S> w_norm, Var<S> eta_rows, NoiseSource<S>& noise);

// Prior mean of zeta given eta rows: eta W + c.
template <typename S>
Var<S> zeta_prior_mean(Tape<S>& t, Model<S>& m, Var<S> eta_rows);

template <typename S>
Var<S> topic_word(Tape<S>& t, Model<S>& m);  // K x V

template <typename S>
Var<S> decode(Tape<S>& t, Model<S>& m, Var<S> zeta);  // B x K

// Step-major padded batch of LM token sequences.
struct WordBatch {
  std::vector<int> ids;  // M*B, row j*B + b
  std::vector<int> lengths;
  Eigen::Index B = 0;
  Eigen::Index M = 0;
};
WordBatch pack_words(const std::vector<const std::vector<int>*>& seqs);

template <typename S>
Var<S> encode_words(Tape<S>& t, Model<S>& m, const WordBatch& wb);  // M*B x H

// s = sum_j sum_i (theta_i - delta_att) a_ij u_j
template <typename S>
Var<S> topic_pool(Tape<S>& t, Model<S>& m, Var<S> U, Var<S> theta, const WordBatch& wb);

// alpha_t (K x E) from one xi row.
template <typename S>
Var<S> dynamic_alpha(Tape<S>& t, Model<S>& m, Var<S> xi_row);

// Trendy summary; xi_rows holds one xi per document (B x dim(xi)).
template <typename S>
Var<S> trendy_pool(Tape<S>& t, Model<S>& m, Var<S> U, Var<S> theta, Var<S> xi_rows, const WordBatch& wb);

// Trendy summary with one alpha_t (K x E) shared by the whole batch.
template <typename S>
Var<S> trendy_pool_fixed(Tape<S>& t, Model<S>& m, Var<S> U, Var<S> theta, Var<S> alpha_t, const WordBatch& wb);

template <typename S>
Var<S> rating_head(Tape<S>& t, Model<S>& m, Var<S> s);  // B x 1, in (0,1)

// sqrt(mean((a-b)^2)) with a zero subgradient at 0.
template <typename S>
Var<S> rmse(Var<S> pred, Var<S> target);

// ---------------------------------------------------------------- joint objective

template <typename S>
struct LossTerms {
  Var<S> loss;
  Var<S> recon;      // sum of log-likelihoods (not negated)
  Var<S> kl_local;   // summed
  Var<S> kl_global;  // eta (and xi) chains
  Var<S> reg;        // RMSE
  Var<S> r_hat;      // B x 1
};

// Loss = doc * (-recon + kl * kl_local) + global * kl * kl_global + alpha_y * reg.
// The defaults give the plain negative ELBO plus the weighted RMSE.
struct LossScales {
  double doc = 1.0;
  double global = 1.0;
  double kl = 1.0;         // KL warm-up factor
  bool regression = true;  // false: topic-model terms only, reg = 0
};

template <typename S>
struct Batch {
  std::vector<const Document*> docs;
  std::vector<int> rows;  // latent-chain row of each document
};

// W: T x V normalised slice BoWs (unused by the MLP baseline).
template <typename S>
LossTerms<S> joint_loss(Tape<S>& t, Model<S>& m, const Mat<S>& W, const Batch<S>& batch, NoiseSource<S>& noise,
                        LossScales scales = {});

// Dense BoW rows for a set of documents: counts and L1-normalised.
template <typename S>
Mat<S> bow_matrix(const std::vector<const Document*>& docs, int V, bool normalize);

// ---------------------------------------------------------------- readouts

enum class ZetaSource {
  Posterior,  // q(zeta | w, eta)
  Prior,      // p(zeta | eta)
};

// Rating predictions for documents given fixed chain rows (eta, and xi when
// the trend extension is on). noise drives zeta sampling; ZeroNoise gives the
// mean readout.
template <typename S>
Vec<S> readout(Model<S>& m, const Mat<S>& eta_rows, const Mat<S>* xi_rows, const std::vector<const Document*>& docs,
               ZetaSource src, NoiseSource<S>& noise);

// In-window prediction (validation/test): posterior means of the chain on W,
// then readout with ZetaSource::Posterior and zero noise.
template <typename S>
Vec<S> predict_in_window(Model<S>& m, const Mat<S>& W, const std::vector<const Document*>& docs,
                         const std::vector<int>& rows);

// ---------------------------------------------------------------- checkpoints

inline constexpr int kCheckpointVersion = 1;

template <typename S>
struct Checkpoint {
  Model<S> model;
  std::map<std::string, std::string> meta;
};

// Writes <dir>/tensors.bin + manifest.txt. meta is stored alongside the model
// config, vocabulary hashes and format version.
template <typename S>
void save_checkpoint(const std::filesystem::path& dir, Model<S>& m, const Vocabulary* tm, const Vocabulary* lm,
                     std::map<std::string, std::string> meta = {});

template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& dir);

// Throws DataError when the checkpoint was trained against other vocabularies.
void check_checkpoint_vocab(const std::map<std::string, std::string>& meta, const Vocabulary& tm, const Vocabulary& lm);

}  // namespace dtam
