#include "dtam/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace dtam {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw UsageError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

// ---------------------------------------------------------------- TrainConfig

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("train config: " + what);
  };
  need(learning_rate > 0, "learning_rate must be > 0");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(max_epochs >= 0, "max_epochs must be >= 0");
  need(patience >= 1, "patience must be >= 1");
  need(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "adam betas must be in [0,1)");
  need(adam_eps > 0, "adam_eps must be > 0");
  need(kl_warmup_epochs >= 0, "kl_warmup_epochs must be >= 0");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {{"learning_rate", fmt(learning_rate)},
          {"batch_size", std::to_string(batch_size)},
          {"max_epochs", std::to_string(max_epochs)},
          {"patience", std::to_string(patience)},
          {"optimizer", to_string(optimizer)},
          {"clip_norm", fmt(clip_norm)},
          {"adam_beta1", fmt(adam_beta1)},
          {"adam_beta2", fmt(adam_beta2)},
          {"adam_eps", fmt(adam_eps)},
          {"kl_warmup_epochs", std::to_string(kl_warmup_epochs)},
          {"seed", std::to_string(seed)},
          {"deterministic", deterministic ? "true" : "false"},
          {"glove_path", glove_path}};
}

TrainConfig TrainConfig::from_map(const KeyValues& kv, TrainConfig c) {
  static const std::set<std::string> known{"learning_rate", "batch_size", "max_epochs", "patience", "optimizer",
                                           "clip_norm", "adam_beta1", "adam_beta2", "adam_eps", "kl_warmup_epochs",
                                           "seed", "deterministic", "glove_path"};
  for (const auto& [k, v] : kv.values)
    if (!known.count(k)) throw UsageError("unknown train setting '" + k + "'");
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.max_epochs = static_cast<int>(kv.get_int("max_epochs", c.max_epochs));
  c.patience = static_cast<int>(kv.get_int("patience", c.patience));
  c.optimizer = parse_optimizer(kv.get("optimizer", to_string(c.optimizer)));
  c.clip_norm = kv.get_double("clip_norm", c.clip_norm);
  c.adam_beta1 = kv.get_double("adam_beta1", c.adam_beta1);
  c.adam_beta2 = kv.get_double("adam_beta2", c.adam_beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.kl_warmup_epochs = static_cast<int>(kv.get_int("kl_warmup_epochs", c.kl_warmup_epochs));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.deterministic = kv.get_bool("deterministic", c.deterministic);
  c.glove_path = kv.get("glove_path", c.glove_path);
  return c;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,recon,kl_local,kl_global,reg_loss,val_rmse,seconds\n";
  for (const auto& e : epochs)
    out << e.epoch << ',' << fmt(e.recon) << ',' << fmt(e.kl_local) << ',' << fmt(e.kl_global) << ','
        << fmt(e.reg_loss) << ',' << fmt(e.val_rmse) << ',' << fmt(e.seconds) << '\n';
}

// ---------------------------------------------------------------- data

template <typename S>
Mat<S> chain_input(const CorpusTimeline& history, ModelKind kind) {
  if (history.T() == 0) throw DataError("history timeline has no slices");
  if (kind == ModelKind::StaticTam) {
    Eigen::VectorXd total = Eigen::VectorXd::Zero(history.V);
    for (const auto& s : history.slices) total += s.bow;
    if (total.sum() > 0) total /= total.sum();
    return total.transpose().cast<S>();
  }
  return history.normalized_bows().cast<S>();
}

template <typename S>
TrainData<S> make_train_data(const CorpusTimeline& history, const std::vector<Document>& val, ModelKind kind) {
  TrainData<S> d;
  d.W = chain_input<S>(history, kind);
  d.first_index = history.first_index();
  const bool collapse = kind == ModelKind::StaticTam;
  auto row_of = [&](const Document& doc) {
    const int r = doc.time_index - d.first_index;
    if (r < 0 || r >= history.T()) throw DataError("document " + doc.id + " lies outside the history window");
    return collapse ? 0 : r;
  };
  for (const auto& s : history.slices)
    for (const auto& doc : s.docs) {
      d.train.push_back(&doc);
      d.train_rows.push_back(row_of(doc));
    }
  for (const auto& doc : val) {
    d.val.push_back(&doc);
    d.val_rows.push_back(row_of(doc));
  }
  return d;
}

// ---------------------------------------------------------------- optimizer

template <typename S>
double Optimizer<S>::step(const NamedParams<S>& params) {
  if (m_.empty()) {
    for (const auto& [name, p] : params) {
      m_.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      v_.push_back(Mat<S>::Zero(p->rows(), p->cols()));
    }
  }
  require_dims(m_.size() == params.size(), "optimizer: parameter set changed between steps");
  double sq = 0;
  for (const auto& [name, p] : params) sq += static_cast<double>(p->grad.squaredNorm());
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("optimizer: non-finite gradient norm");
  const S clip = static_cast<S>(cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0);
  const S lr = static_cast<S>(cfg_.learning_rate);
  ++t_;
  const S b1 = static_cast<S>(cfg_.adam_beta1), b2 = static_cast<S>(cfg_.adam_beta2);
  const S c1 = S(1) - static_cast<S>(std::pow(cfg_.adam_beta1, static_cast<double>(t_)));
  const S c2 = S(1) - static_cast<S>(std::pow(cfg_.adam_beta2, static_cast<double>(t_)));
  const S eps = static_cast<S>(cfg_.adam_eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<S>& p = *params[i].second;
    const Mat<S> g = p.grad * clip;
    if (cfg_.optimizer == OptimizerKind::Sgd) {
      p.value -= lr * g;
    } else {
      m_[i] = b1 * m_[i] + (S(1) - b1) * g;
      v_[i] = b2 * v_[i] + (S(1) - b2) * g.cwiseProduct(g);
      p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }
  return norm;
}

// ---------------------------------------------------------------- training

template <typename S>
double validation_rmse(Model<S>& m, const TrainData<S>& data) {
  if (data.val.empty()) return std::numeric_limits<double>::quiet_NaN();
  Vec<S> pred = predict_in_window(m, data.W, data.val, data.val_rows);
  double se = 0;
  for (std::size_t i = 0; i < data.val.size(); ++i) {
    const double e = static_cast<double>(pred(static_cast<Eigen::Index>(i))) - data.val[i]->rating;
    se += e * e;
  }
  return std::sqrt(se / static_cast<double>(data.val.size()));
}

template <typename S>
TrainResult<S> train(Model<S> model, const TrainConfig& cfg, const TrainData<S>& data,
                     const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  TrainResult<S> res;
  res.model = model;
  res.best_val_rmse = validation_rmse(model, data);
  if (cfg.max_epochs == 0) return res;
  if (data.train.empty()) throw DataError("no training documents");

  std::mt19937_64 rng(cfg.seed);
  Optimizer<S> opt(cfg);
  const NamedParams<S> params = model.named();
  const std::size_t N = data.train.size();
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0, recon = 0, kl_local = 0, kl_global = 0, reg = 0;
    int batches = 0;
    try {
      for (std::size_t lo = 0; lo < N; lo += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t hi = std::min(N, lo + static_cast<std::size_t>(cfg.batch_size));
        Batch<S> b;
        for (std::size_t i = lo; i < hi; ++i) {
          b.docs.push_back(data.train[order[i]]);
          b.rows.push_back(data.train_rows[order[i]]);
        }
        LossScales sc;
        sc.doc = 1.0 / static_cast<double>(hi - lo);
        sc.global = 1.0 / static_cast<double>(N);
        if (cfg.kl_warmup_epochs > 0)
          sc.kl = std::min(1.0, (epoch - 1 + static_cast<double>(lo) / static_cast<double>(N)) / cfg.kl_warmup_epochs);
        Tape<S> t;
        t.training = true;
        t.seed(rng());
        GaussianNoise<S> noise(rng());
        LossTerms<S> l = joint_loss(t, model, data.W, b, noise, sc);
        if (!std::isfinite(static_cast<double>(l.loss.scalar()))) throw NumericError("non-finite training loss");
        model.zero_grad();
        t.backward(l.loss);
        opt.step(params);
        for (const auto& [name, p] : params)
          if (!p->value.allFinite()) throw NumericError("parameter " + name + " became non-finite");
        total += static_cast<double>(l.loss.scalar());
        recon += static_cast<double>(l.recon.scalar());
        kl_local += static_cast<double>(l.kl_local.scalar());
        kl_global += static_cast<double>(l.kl_global.scalar());
        reg += static_cast<double>(l.reg.scalar());
        ++batches;
      }
    } catch (const NumericError& e) {
      res.diverged = true;
      res.message = "diverged in epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    EpochStats st;
    st.epoch = epoch;
    st.loss = total / batches;
    st.recon = recon / static_cast<double>(N);
    st.kl_local = kl_local / static_cast<double>(N);
    st.kl_global = kl_global / batches;
    st.reg_loss = reg / batches;
    st.val_rmse = validation_rmse(model, data);
    if (!cfg.deterministic)
      st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.epochs.push_back(st);
    if (on_epoch) on_epoch(st);

    const bool improved = std::isnan(res.best_val_rmse) || st.val_rmse < res.best_val_rmse;
    if (data.val.empty() || improved) {
      res.model = model;
      res.best_epoch = epoch;
      res.best_val_rmse = st.val_rmse;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return res;
}

template <typename S>
int load_glove(const std::filesystem::path& path, const Vocabulary& vocab, Param<S>& rho) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path.string());
  std::string line;
  int set = 0;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    const int id = vocab.id(tok);
    if (id < 0) continue;
    std::vector<double> vals;
    double x;
    while (ls >> x) vals.push_back(x);
    if (static_cast<Eigen::Index>(vals.size()) != rho.cols())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": embedding has " + std::to_string(vals.size()) +
                      " components, model E is " + std::to_string(rho.cols()));
    for (Eigen::Index j = 0; j < rho.cols(); ++j) rho.value(id, j) = static_cast<S>(vals[static_cast<std::size_t>(j)]);
    ++set;
  }
  return set;
}

// ---------------------------------------------------------------- grid search

std::vector<KeyValues> GridSpace::cells() const {
  if (axes.empty()) throw UsageError("grid search: empty search space");
  for (const auto& [k, vals] : axes)
    if (vals.empty()) throw UsageError("grid search: axis " + k + " has no values");
  std::vector<KeyValues> out;
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    KeyValues kv;
    for (std::size_t a = 0; a < axes.size(); ++a) kv.values[axes[a].first] = axes[a].second[idx[a]];
    out.push_back(std::move(kv));
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++idx[a] < axes[a].second.size()) break;
      idx[a] = 0;
      if (a == 0) return out;
    }
  }
}

GridSpace GridSpace::from_map(const KeyValues& kv) {
  GridSpace g;
  for (const auto& [k, v] : kv.values) {
    std::vector<std::string> vals;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto b = item.find_first_not_of(" \t");
      const auto e = item.find_last_not_of(" \t");
      if (b != std::string::npos) vals.push_back(item.substr(b, e - b + 1));
    }
    g.axes.emplace_back(k, std::move(vals));
  }
  return g;
}

GridSpace GridSpace::defaults() {
  GridSpace g;
  g.axes = {{"train.learning_rate", {"0.001", "0.0005"}},
            {"train.batch_size", {"32", "128"}},
            {"model.alpha_y", {"1", "100", "500", "1000"}},
            {"model.K", {"25", "50", "100"}}};
  return g;
}

void GridResult::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "rank,cell,val_rmse,best_epoch,diverged,settings\n";
  for (std::size_t r = 0; r < leaderboard.size(); ++r) {
    const auto& row = leaderboard[r];
    std::string settings;
    for (const auto& [k, v] : row.settings.values) settings += (settings.empty() ? "" : ";") + k + "=" + v;
    out << r + 1 << ',' << row.cell << ',' << fmt(row.val_rmse) << ',' << row.best_epoch << ','
        << (row.diverged ? 1 : 0) << ",\"" << settings << "\"\n";
  }
}

GridResult grid_search(const GridSpace& space, const ModelConfig& base_model, const TrainConfig& base_train,
                       const CorpusTimeline& history, const std::vector<Document>& val,
                       const std::function<void(const LeaderboardRow&)>& on_cell, int threads) {
  const auto cells = space.cells();
  GridResult res;
  std::vector<std::pair<ModelConfig, TrainConfig>> configs;
  for (const auto& cell : cells) {
    for (const auto& [k, v] : cell.values)
      if (k.rfind("model.", 0) != 0 && k.rfind("train.", 0) != 0)
        throw UsageError("grid search: key '" + k + "' must start with model. or train.");
    configs.emplace_back(ModelConfig::from_map(cell.section("model"), base_model),
                         TrainConfig::from_map(cell.section("train"), base_train));
  }
  // Cells are independent; rows land in cell order whatever the thread count.
  std::vector<LeaderboardRow> rows(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex report;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < cells.size();) {
      try {
        const auto& [mc, tc] = configs[i];
        auto data = make_train_data<double>(history, val, mc.kind);
        auto r = train(Model<double>::init(mc, tc.seed), tc, data);
        rows[i] = LeaderboardRow{static_cast<int>(i), cells[i], r.best_val_rmse, r.best_epoch, r.diverged};
        if (on_cell) {
          std::lock_guard<std::mutex> lock(report);
          on_cell(rows[i]);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, cells.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  res.leaderboard = std::move(rows);
  std::stable_sort(res.leaderboard.begin(), res.leaderboard.end(), [](const LeaderboardRow& a, const LeaderboardRow& b) {
    const bool an = std::isnan(a.val_rmse), bn = std::isnan(b.val_rmse);
    if (an != bn) return bn;
    return !an && a.val_rmse < b.val_rmse;
  });
  const int best = res.leaderboard.front().cell;
  res.best_model = configs[static_cast<std::size_t>(best)].first;
  res.best_train = configs[static_cast<std::size_t>(best)].second;
  return res;
}

// ---------------------------------------------------------------- instantiations

#define DTAM_INSTANTIATE(S)                                                                                        \
  template Mat<S> chain_input<S>(const CorpusTimeline&, ModelKind);                                              \
  template TrainData<S> make_train_data<S>(const CorpusTimeline&, const std::vector<Document>&, ModelKind);      \
  template class Optimizer<S>;                                                                                    \
  template double validation_rmse(Model<S>&, const TrainData<S>&);                                                \
  template TrainResult<S> train(Model<S>, const TrainConfig&, const TrainData<S>&,                                \
                                const std::function<void(const EpochStats&)>&);                                   \
  template int load_glove(const std::filesystem::path&, const Vocabulary&, Param<S>&);

DTAM_INSTANTIATE(float)
DTAM_INSTANTIATE(double)

#undef DTAM_INSTANTIATE

}  // namespace dtam
