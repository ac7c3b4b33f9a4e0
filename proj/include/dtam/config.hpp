#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dtam/numcore/nn.hpp"

namespace dtam {

// Flat key/value settings. Keys inside a `[section]` are stored as
// "section.key".
struct KeyValues {
  std::map<std::string, std::string> values;

  static KeyValues parse(std::istream& in);
  static KeyValues load(const std::string& path);
  // "key=value"; throws UsageError when malformed.
  void set(const std::string& assignment);
  void merge(const KeyValues& other);
  bool has(const std::string& k) const { return values.count(k) != 0; }
  std::string get(const std::string& k, const std::string& def) const;
  double get_double(const std::string& k, double def) const;
  long long get_int(const std::string& k, long long def) const;
  bool get_bool(const std::string& k, bool def) const;
  std::vector<int> get_ints(const std::string& k, const std::vector<int>& def) const;
  // Keys under "prefix." with the prefix stripped.
  KeyValues section(const std::string& prefix) const;
};

enum class ModelKind { DTam, StaticTam, Dst, Mlp };
std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

struct ModelConfig {
  ModelKind kind = ModelKind::DTam;

  // topic model
  int K = 25;
  int V = 0;
  int E = 300;
  int eta_dim = 0;   // 0 -> K
  int zeta_dim = 0;  // 0 -> K
  std::vector<int> encoder_hidden{256, 256};
  std::vector<int> transition_hidden{64, 64};
  std::vector<int> global_head_hidden{64};
  std::vector<int> decoder_hidden{};
  CellKind global_cell = CellKind::Lstm;
  int global_layers = 4;
  int global_hidden = 400;
  double delta_tr = 0.0;   // 0 -> per-K default
  bool delta_is_variance = false;
  bool per_step_global = false;
  double logstd_clamp = 8.0;

  // attention / regression
  int lm_vocab = 0;
  int lm_embed = 128;
  int word_hidden = 128;
  std::vector<int> query_hidden{};
  std::vector<int> regressor_hidden{256, 256};
  double delta_att = -1.0;  // < 0 -> per-K default
  double alpha_y = 1.0;
  int mlp_repr = 128;  // MLP baseline representation size

  Activation activation = Activation::Relu;
  double dropout = 0.3;

  // trendiness extension
  bool trend = false;
  int xi_dim = 0;  // 0 -> K
  double delta_xi = 0.1;
  bool trend_gate_clamp = false;
  bool residual_outside = false;

  // prediction
  bool condition_future_bow = false;

  // Fills per-K defaults and zero-means-K dims. Idempotent.
  ModelConfig resolved() const;
  void validate() const;

  bool has_topic_model() const { return kind != ModelKind::Mlp; }
  bool has_attention() const { return kind == ModelKind::DTam || kind == ModelKind::StaticTam; }

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const KeyValues& kv, ModelConfig base);
  static ModelConfig from_map(const KeyValues& kv) { return from_map(kv, ModelConfig()); }
};

// Default transition noise and attention offset by K: {25: 0.2, 50: 0.1, 100: 0.005}.
double default_delta_for_k(int K);

std::string join_ints(const std::vector<int>& v);

}  // namespace dtam
