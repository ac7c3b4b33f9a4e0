#include "dtam/config.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dtam {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

KeyValues KeyValues::parse(std::istream& in) {
  KeyValues kv;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError("config line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string k = trim(line.substr(0, eq));
    if (k.empty()) throw UsageError("config line " + std::to_string(lineno) + ": empty key");
    kv.values[section.empty() ? k : section + "." + k] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  return parse(in);
}

void KeyValues::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' is not key=value");
  values[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& [k, v] : other.values) values[k] = v;
}

std::string KeyValues::get(const std::string& k, const std::string& def) const {
  auto it = values.find(k);
  return it == values.end() ? def : it->second;
}

double KeyValues::get_double(const std::string& k, double def) const {
  auto it = values.find(k);
  if (it == values.end()) return def;
  try {
    std::size_t used = 0;
    double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(k);
    return v;
  } catch (const std::exception&) {
    throw UsageError("setting " + k + "='" + it->second + "' is not a number");
  }
}

long long KeyValues::get_int(const std::string& k, long long def) const {
  auto it = values.find(k);
  if (it == values.end()) return def;
  try {
    std::size_t used = 0;
    long long v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(k);
    return v;
  } catch (const std::exception&) {
    throw UsageError("setting " + k + "='" + it->second + "' is not an integer");
  }
}

bool KeyValues::get_bool(const std::string& k, bool def) const {
  auto it = values.find(k);
  if (it == values.end()) return def;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw UsageError("setting " + k + "='" + v + "' is not a boolean");
}

std::vector<int> KeyValues::get_ints(const std::string& k, const std::vector<int>& def) const {
  auto it = values.find(k);
  if (it == values.end()) return def;
  std::vector<int> out;
  std::string s = it->second;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream ss(s);
  std::string tok;
  while (ss >> tok) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw UsageError("setting " + k + " has a non-integer entry '" + tok + "'");
    }
  }
  return out;
}

KeyValues KeyValues::section(const std::string& prefix) const {
  KeyValues out;
  const std::string p = prefix + ".";
  for (const auto& [k, v] : values)
    if (k.rfind(p, 0) == 0) out.values[k.substr(p.size())] = v;
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::DTam: return "dtam";
    case ModelKind::StaticTam: return "tam";
    case ModelKind::Dst: return "dst";
    case ModelKind::Mlp: return "mlp";
  }
  return "dtam";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "dtam" || s == "d-tam") return ModelKind::DTam;
  if (s == "tam" || s == "static" || s == "tam-gru") return ModelKind::StaticTam;
  if (s == "dst" || s == "d-st") return ModelKind::Dst;
  if (s == "mlp") return ModelKind::Mlp;
  throw UsageError("unknown model kind '" + s + "' (expected dtam, tam, dst or mlp)");
}

double default_delta_for_k(int K) {
  if (K <= 25) return 0.2;
  if (K <= 50) return 0.1;
  return 0.005;
}

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  if (c.eta_dim <= 0) c.eta_dim = c.K;
  if (c.zeta_dim <= 0) c.zeta_dim = c.K;
  if (c.xi_dim <= 0) c.xi_dim = c.K;
  if (c.delta_tr <= 0) c.delta_tr = default_delta_for_k(c.K);
  if (c.delta_att < 0) c.delta_att = default_delta_for_k(c.K);
  return c;
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("model config: " + what);
  };
  need(K >= 1, "K must be >= 1");
  need(V >= 1, "V must be >= 1 (set from the dataset vocabulary)");
  need(E >= 1, "E must be >= 1");
  need(eta_dim >= 1 && zeta_dim >= 1, "latent dims must be >= 1");
  need(delta_tr > 0, "delta_tr must be > 0");
  need(delta_att >= 0 && delta_att < 1, "delta_att must be in [0,1)");
  need(alpha_y >= 0, "alpha_y must be >= 0");
  need(dropout >= 0 && dropout < 1, "dropout must be in [0,1)");
  need(global_layers >= 1 && global_hidden >= 1, "global recurrence needs >= 1 layer and hidden size");
  need(logstd_clamp > 0, "logstd_clamp must be > 0");
  if (has_attention()) need(lm_vocab >= 1 && lm_embed >= 1 && word_hidden >= 1, "attention models need lm_vocab, lm_embed, word_hidden");
  if (trend) {
    need(has_attention(), "the trend extension requires an attention model");
    need(xi_dim >= 1 && delta_xi > 0, "trend needs xi_dim >= 1 and delta_xi > 0");
  }
  for (int h : encoder_hidden) need(h >= 1, "hidden sizes must be >= 1");
  for (int h : regressor_hidden) need(h >= 1, "hidden sizes must be >= 1");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  std::map<std::string, std::string> m;
  m["kind"] = to_string(kind);
  m["K"] = std::to_string(K);
  m["V"] = std::to_string(V);
  m["E"] = std::to_string(E);
  m["eta_dim"] = std::to_string(eta_dim);
  m["zeta_dim"] = std::to_string(zeta_dim);
  m["encoder_hidden"] = join_ints(encoder_hidden);
  m["transition_hidden"] = join_ints(transition_hidden);
  m["global_head_hidden"] = join_ints(global_head_hidden);
  m["decoder_hidden"] = join_ints(decoder_hidden);
  m["global_cell"] = to_string(global_cell);
  m["global_layers"] = std::to_string(global_layers);
  m["global_hidden"] = std::to_string(global_hidden);
  m["delta_tr"] = fmt(delta_tr);
  m["delta_is_variance"] = delta_is_variance ? "true" : "false";
  m["per_step_global"] = per_step_global ? "true" : "false";
  m["logstd_clamp"] = fmt(logstd_clamp);
  m["lm_vocab"] = std::to_string(lm_vocab);
  m["lm_embed"] = std::to_string(lm_embed);
  m["word_hidden"] = std::to_string(word_hidden);
  m["query_hidden"] = join_ints(query_hidden);
  m["regressor_hidden"] = join_ints(regressor_hidden);
  m["delta_att"] = fmt(delta_att);
  m["alpha_y"] = fmt(alpha_y);
  m["mlp_repr"] = std::to_string(mlp_repr);
  m["activation"] = to_string(activation);
  m["dropout"] = fmt(dropout);
  m["trend"] = trend ? "true" : "false";
  m["xi_dim"] = std::to_string(xi_dim);
  m["delta_xi"] = fmt(delta_xi);
  m["trend_gate_clamp"] = trend_gate_clamp ? "true" : "false";
  m["residual_outside"] = residual_outside ? "true" : "false";
  m["condition_future_bow"] = condition_future_bow ? "true" : "false";
  return m;
}

ModelConfig ModelConfig::from_map(const KeyValues& kv, ModelConfig c) {
  static const std::vector<std::string> known{
      "kind", "K", "V", "E", "eta_dim", "zeta_dim", "encoder_hidden", "transition_hidden", "global_head_hidden",
      "decoder_hidden", "global_cell", "global_layers", "global_hidden", "delta_tr", "delta_is_variance",
      "per_step_global", "logstd_clamp", "lm_vocab", "lm_embed", "word_hidden", "query_hidden", "regressor_hidden",
      "delta_att", "alpha_y", "mlp_repr", "activation", "dropout", "trend", "xi_dim", "delta_xi", "trend_gate_clamp",
      "residual_outside", "condition_future_bow"};
  for (const auto& [k, v] : kv.values)
    if (std::find(known.begin(), known.end(), k) == known.end()) throw UsageError("unknown model setting '" + k + "'");
  if (kv.has("kind")) c.kind = parse_model_kind(kv.get("kind", ""));
  c.K = static_cast<int>(kv.get_int("K", c.K));
  c.V = static_cast<int>(kv.get_int("V", c.V));
  c.E = static_cast<int>(kv.get_int("E", c.E));
  c.eta_dim = static_cast<int>(kv.get_int("eta_dim", c.eta_dim));
  c.zeta_dim = static_cast<int>(kv.get_int("zeta_dim", c.zeta_dim));
  c.encoder_hidden = kv.get_ints("encoder_hidden", c.encoder_hidden);
  c.transition_hidden = kv.get_ints("transition_hidden", c.transition_hidden);
  c.global_head_hidden = kv.get_ints("global_head_hidden", c.global_head_hidden);
  c.decoder_hidden = kv.get_ints("decoder_hidden", c.decoder_hidden);
  if (kv.has("global_cell")) c.global_cell = parse_cell_kind(kv.get("global_cell", ""));
  c.global_layers = static_cast<int>(kv.get_int("global_layers", c.global_layers));
  c.global_hidden = static_cast<int>(kv.get_int("global_hidden", c.global_hidden));
  c.delta_tr = kv.get_double("delta_tr", c.delta_tr);
  c.delta_is_variance = kv.get_bool("delta_is_variance", c.delta_is_variance);
  c.per_step_global = kv.get_bool("per_step_global", c.per_step_global);
  c.logstd_clamp = kv.get_double("logstd_clamp", c.logstd_clamp);
  c.lm_vocab = static_cast<int>(kv.get_int("lm_vocab", c.lm_vocab));
  c.lm_embed = static_cast<int>(kv.get_int("lm_embed", c.lm_embed));
  c.word_hidden = static_cast<int>(kv.get_int("word_hidden", c.word_hidden));
  c.query_hidden = kv.get_ints("query_hidden", c.query_hidden);
  c.regressor_hidden = kv.get_ints("regressor_hidden", c.regressor_hidden);
  c.delta_att = kv.get_double("delta_att", c.delta_att);
  c.alpha_y = kv.get_double("alpha_y", c.alpha_y);
  c.mlp_repr = static_cast<int>(kv.get_int("mlp_repr", c.mlp_repr));
  if (kv.has("activation")) c.activation = parse_activation(kv.get("activation", ""));
  c.dropout = kv.get_double("dropout", c.dropout);
  c.trend = kv.get_bool("trend", c.trend);
  c.xi_dim = static_cast<int>(kv.get_int("xi_dim", c.xi_dim));
  c.delta_xi = kv.get_double("delta_xi", c.delta_xi);
  c.trend_gate_clamp = kv.get_bool("trend_gate_clamp", c.trend_gate_clamp);
  c.residual_outside = kv.get_bool("residual_outside", c.residual_outside);
  c.condition_future_bow = kv.get_bool("condition_future_bow", c.condition_future_bow);
  return c;
}

}  // namespace dtam
