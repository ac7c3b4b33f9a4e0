#include "dtam/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dtam/dtm.hpp"
#include "dtam/forecast.hpp"
#include "dtam/metrics.hpp"
#include "dtam/synthgen.hpp"
#include "dtam/trainer.hpp"

namespace dtam {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kSections = {"prep", "model", "train", "forecast", "eval", "scenario", "grid"};

struct Context {
  KeyValues kv;
  fs::path out;
  int threads = 1;
  bool deterministic = false;
  bool quiet = false;
  std::ostream* report = nullptr;
  std::ostream* log = nullptr;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void reject_unknown(const KeyValues& kv, const std::set<std::string>& known, const std::string& section) {
  for (const auto& [k, v] : kv.values)
    if (!known.count(k)) throw UsageError("unknown " + section + " setting '" + k + "'");
}

void write_section(std::ostream& out, const std::string& name, const std::map<std::string, std::string>& m) {
  out << "[" << name << "]\n";
  for (const auto& [k, v] : m) out << k << " = " << v << "\n";
}

// ---------------------------------------------------------------- settings

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::map<std::string, std::string> prep_map(const PrepConfig& c) {
  std::string ratios, authors;
  for (double r : c.ratios) ratios += (ratios.empty() ? "" : ",") + num(r);
  for (const auto& a : c.filters.automated_authors) authors += (authors.empty() ? "" : ",") + a;
  return {{"granularity", c.granularity.str()},
          {"n_prediction", std::to_string(c.n_prediction)},
          {"min_df", std::to_string(c.min_df)},
          {"max_vocab", std::to_string(c.max_vocab)},
          {"vocab_order", c.vocab_order == VocabOrder::Descending ? "descending" : "ascending"},
          {"lm_min_count", std::to_string(c.lm_min_count)},
          {"max_len", std::to_string(c.max_len)},
          {"ratios", ratios},
          {"seed", std::to_string(c.seed)},
          {"subsample_per_slice", std::to_string(c.subsample_per_slice)},
          {"label_cap", num(c.label_cap)},
          {"min_words", std::to_string(c.filters.min_words)},
          {"automated_authors", authors}};
}

PrepConfig prep_config(const KeyValues& kv) {
  PrepConfig c;
  std::set<std::string> known;
  for (const auto& [k, v] : prep_map(c)) known.insert(k);
  reject_unknown(kv, known, "prep");
  if (kv.has("granularity")) c.granularity = Granularity::parse(kv.get("granularity", ""));
  c.n_prediction = static_cast<int>(kv.get_int("n_prediction", c.n_prediction));
  c.min_df = static_cast<int>(kv.get_int("min_df", c.min_df));
  c.max_vocab = static_cast<int>(kv.get_int("max_vocab", c.max_vocab));
  if (kv.has("vocab_order")) {
    const std::string o = kv.get("vocab_order", "");
    if (o != "descending" && o != "ascending") throw UsageError("prep.vocab_order must be descending or ascending");
    c.vocab_order = o == "descending" ? VocabOrder::Descending : VocabOrder::Ascending;
  }
  c.lm_min_count = static_cast<int>(kv.get_int("lm_min_count", c.lm_min_count));
  c.max_len = static_cast<int>(kv.get_int("max_len", c.max_len));
  if (kv.has("ratios")) {
    const auto parts = split_commas(kv.get("ratios", ""));
    if (parts.size() != 3) throw UsageError("prep.ratios needs three comma-separated values");
    for (std::size_t i = 0; i < 3; ++i) {
      KeyValues one;
      one.values["x"] = parts[i];
      c.ratios[i] = one.get_double("x", 0);
    }
  }
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.subsample_per_slice = static_cast<int>(kv.get_int("subsample_per_slice", c.subsample_per_slice));
  c.label_cap = kv.get_double("label_cap", c.label_cap);
  c.filters.min_words = static_cast<int>(kv.get_int("min_words", c.filters.min_words));
  if (kv.has("automated_authors")) c.filters.automated_authors = split_commas(kv.get("automated_authors", ""));
  return c;
}

ForecastConfig forecast_config(const KeyValues& kv) {
  reject_unknown(kv, {"n_samples", "mode"}, "forecast");
  ForecastConfig c;
  c.n_samples = static_cast<int>(kv.get_int("n_samples", c.n_samples));
  if (kv.has("mode")) c.mode = parse_rollout_mode(kv.get("mode", ""));
  c.validate();
  return c;
}

struct EvalSettings {
  int top_n = 10;
  std::uint64_t seed = 0;
};

EvalSettings eval_settings(const KeyValues& kv) {
  reject_unknown(kv, {"top_n", "seed"}, "eval");
  EvalSettings e;
  e.top_n = static_cast<int>(kv.get_int("top_n", e.top_n));
  e.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(e.seed)));
  return e;
}

TrainConfig train_config(const Context& ctx) {
  TrainConfig t = TrainConfig::from_map(ctx.kv.section("train"));
  if (ctx.deterministic) t.deterministic = true;
  t.validate();
  return t;
}

// Vocabulary sizes always come from the dataset.
ModelConfig model_config(const Context& ctx, const Dataset& ds) {
  ModelConfig m = ModelConfig::from_map(ctx.kv.section("model"));
  m.V = ds.tm_vocab.size();
  m.lm_vocab = ds.lm_vocab.size();
  return m;
}

// Every section is parsed before any work starts so that a misspelt key fails
// whichever subcommand runs.
void check_settings(const KeyValues& kv) {
  for (const auto& [k, v] : kv.values) {
    const auto dot = k.find('.');
    if (dot == std::string::npos || !kSections.count(k.substr(0, dot)))
      throw UsageError("setting '" + k + "' is outside the known sections (prep, model, train, forecast, eval, "
                       "scenario, grid)");
  }
  prep_config(kv.section("prep"));
  ModelConfig::from_map(kv.section("model"));
  TrainConfig::from_map(kv.section("train"));
  forecast_config(kv.section("forecast"));
  eval_settings(kv.section("eval"));
  ScenarioConfig::from_map(kv.section("scenario"));
  const auto model_keys = ModelConfig().to_map(), train_keys = TrainConfig().to_map();
  for (const auto& [axis, values] : GridSpace::from_map(kv.section("grid")).axes) {
    const bool known = (axis.rfind("model.", 0) == 0 && model_keys.count(axis.substr(6))) ||
                       (axis.rfind("train.", 0) == 0 && train_keys.count(axis.substr(6)));
    if (!known) throw UsageError("unknown grid axis '" + axis + "'");
    if (values.empty()) throw UsageError("grid axis '" + axis + "' has no values");
  }
}

// ---------------------------------------------------------------- shared steps

fs::path data_dir(const Context& ctx, const std::string& given) { return given.empty() ? ctx.out / "data" : fs::path(given); }
fs::path model_dir(const Context& ctx, const std::string& given) { return given.empty() ? ctx.out / "model" : fs::path(given); }

Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "timeline.txt")) throw DataError("no dataset at " + dir.string() + " (run ingest first)");
  return Dataset::load(dir);
}

Checkpoint<double> load_model(const fs::path& dir, const Dataset& ds) {
  if (!fs::exists(dir / "manifest.txt")) throw DataError("no checkpoint at " + dir.string() + " (run train first)");
  auto ck = load_checkpoint<double>(dir);
  check_checkpoint_vocab(ck.meta, ds.tm_vocab, ds.lm_vocab);
  return ck;
}

// TrainData points into the timeline and validation documents, so they live
// alongside it.
struct Training {
  CorpusTimeline history;
  std::vector<Document> val;
  TrainData<double> data;

  Training(const Dataset& ds, ModelKind kind)
      : history(ds.train_timeline()), val(ds.select(Split::Val)), data(make_train_data<double>(history, val, kind)) {}
  Training(const Training&) = delete;
  Training& operator=(const Training&) = delete;
};

std::vector<const Document*> pointers(const std::vector<Document>& docs) {
  std::vector<const Document*> p;
  for (const auto& d : docs) p.push_back(&d);
  return p;
}

void require_topic_model(const Model<double>& m, const char* what) {
  if (!m.cfg.has_topic_model()) throw UsageError(std::string(what) + ": the mlp model has no topics");
}

// ---------------------------------------------------------------- subcommands

int cmd_sample(const Context& ctx) {
  const ScenarioConfig sc = ScenarioConfig::from_map(ctx.kv.section("scenario"));
  sc.validate();
  const SyntheticCorpus corpus = sample_timeline(sc);
  fs::create_directories(ctx.out);
  {
    std::ofstream out(ctx.out / "corpus.jsonl", std::ios::trunc);
    write_jsonl(out, to_raw_documents(corpus));
    if (!out) throw DataError("failed writing corpus.jsonl");
  }
  write_latents_json(ctx.out / "latents.json", corpus, sc);
  {
    std::ofstream out(ctx.out / "scenario.cfg", std::ios::trunc);
    write_section(out, "scenario", sc.to_map());
  }
  std::size_t n = 0;
  for (const auto& s : corpus.timeline.slices) n += s.docs.size();
  *ctx.report << "sampled " << n << " documents over " << sc.T << " slices into " << (ctx.out / "corpus.jsonl").string()
              << "\n";
  return kExitOk;
}

int cmd_ingest(const Context& ctx, const std::string& input) {
  const PrepConfig pc = prep_config(ctx.kv.section("prep"));
  const fs::path in = input.empty() ? ctx.out / "corpus.jsonl" : fs::path(input);
  if (!fs::exists(in)) throw DataError("input " + in.string() + " does not exist");
  IngestStats stats;
  const Dataset ds = prepare_dataset(ingest_jsonl(in, pc.filters, &stats), pc);
  const fs::path dir = ctx.out / "data";
  ds.save(dir);
  {
    std::ofstream out(dir / "prep.cfg", std::ios::trunc);
    write_section(out, "prep", prep_map(pc));
  }
  std::map<Split, int> counts;
  for (Split s : ds.splits) ++counts[s];
  *ctx.report << "lines " << stats.lines << ", kept " << stats.kept << ", dropped author " << stats.dropped_author
              << ", short " << stats.dropped_short << ", utf8 " << stats.dropped_utf8 << "\n"
              << "slices " << ds.T_total << " (history " << ds.T_history() << ", prediction " << ds.n_prediction
              << "), V " << ds.tm_vocab.size() << ", LM vocabulary " << ds.lm_vocab.size() << "\n"
              << "train " << counts[Split::Train] << ", val " << counts[Split::Val] << ", test " << counts[Split::Test]
              << ", future " << counts[Split::Future] << "\n";
  for (const auto& w : ds.warnings) *ctx.log << "warning: " << w << "\n";
  return kExitOk;
}

int cmd_train(const Context& ctx, const std::string& data) {
  const Dataset ds = load_dataset(data_dir(ctx, data));
  const ModelConfig mc = model_config(ctx, ds);
  const TrainConfig tc = train_config(ctx);
  Model<double> model = Model<double>::init(mc, tc.seed);
  if (!tc.glove_path.empty()) {
    const int rows = load_glove(tc.glove_path, ds.tm_vocab, model.gen.rho);
    *ctx.log << "glove: initialised " << rows << " of " << ds.tm_vocab.size() << " rows\n";
  }
  const Training tr(ds, mc.kind);
  auto res = train(std::move(model), tc, tr.data, [&](const EpochStats& e) {
    if (!ctx.quiet)
      *ctx.log << "epoch " << e.epoch << "  recon " << e.recon << "  kl " << e.kl_local << "  rmse " << e.reg_loss
               << "  val " << e.val_rmse << "\n";
  });
  fs::create_directories(ctx.out);
  std::map<std::string, std::string> meta;
  for (const auto& [k, v] : tc.to_map()) meta["train." + k] = v;
  meta["best_epoch"] = std::to_string(res.best_epoch);
  meta["best_val_rmse"] = num(res.best_val_rmse);
  meta["diverged"] = res.diverged ? "true" : "false";
  save_checkpoint(ctx.out / "model", res.model, &ds.tm_vocab, &ds.lm_vocab, meta);
  res.history.write_csv(ctx.out / "history.csv");
  *ctx.report << "best epoch " << res.best_epoch << ", val RMSE " << num(res.best_val_rmse) << "\n";
  if (res.diverged) {
    *ctx.log << "error: training diverged: " << res.message << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_gridsearch(const Context& ctx, const std::string& data) {
  const Dataset ds = load_dataset(data_dir(ctx, data));
  const KeyValues grid = ctx.kv.section("grid");
  const GridSpace space = grid.values.empty() ? GridSpace::defaults() : GridSpace::from_map(grid);
  const ModelConfig mc = model_config(ctx, ds);
  const TrainConfig tc = train_config(ctx);
  const int threads = ctx.deterministic ? 1 : ctx.threads;
  const auto result = grid_search(
      space, mc, tc, ds.train_timeline(), ds.select(Split::Val),
      [&](const LeaderboardRow& r) {
        if (!ctx.quiet) *ctx.log << "cell " << r.cell << "  val " << r.val_rmse << (r.diverged ? "  diverged" : "") << "\n";
      },
      threads);
  fs::create_directories(ctx.out);
  result.write_csv(ctx.out / "leaderboard.csv");
  {
    std::ofstream out(ctx.out / "best.cfg", std::ios::trunc);
    auto model = result.best_model.to_map();
    model.erase("V");
    model.erase("lm_vocab");
    write_section(out, "model", model);
    out << "\n";
    write_section(out, "train", result.best_train.to_map());
  }
  const auto& top = result.leaderboard.front();
  *ctx.report << "best cell " << top.cell << ", val RMSE " << num(top.val_rmse) << "\n";
  return kExitOk;
}

int cmd_eval(const Context& ctx, const std::string& data, const std::string& model) {
  const Dataset ds = load_dataset(data_dir(ctx, data));
  auto ck = load_model(model_dir(ctx, model), ds);
  const ForecastConfig fc = forecast_config(ctx.kv.section("forecast"));
  const EvalSettings es = eval_settings(ctx.kv.section("eval"));
  const Training tr(ds, ck.model.cfg.kind);
  const TrainData<double>& td = tr.data;
  const auto future = ds.select(Split::Future);
  const auto reference = ds.select(Split::Train);
  GaussianNoise<double> noise(es.seed);
  const EvalReport rep = evaluate(ck.model, td.W, td.first_index, pointers(future), pointers(reference), fc, noise, es.top_n);
  const fs::path dir = ctx.out / "eval";
  fs::create_directories(dir);
  rep.write(dir / "report.txt");
  rep.write_slices_csv(dir / "slices.csv");
  GaussianNoise<double> again(es.seed);
  const ForecastResult fr = predict_future(ck.model, td.W, td.first_index, pointers(future), fc, again);
  write_predictions_csv(dir / "predictions.csv", pointers(future), fr, &ds.scaler, true);
  std::ifstream in(dir / "report.txt");
  *ctx.report << in.rdbuf();
  return kExitOk;
}

int cmd_predict(const Context& ctx, const std::string& data, const std::string& model, const std::string& input) {
  const fs::path ddir = data_dir(ctx, data);
  const Dataset ds = load_dataset(ddir);
  auto ck = load_model(model_dir(ctx, model), ds);
  int max_len = PrepConfig().max_len;
  if (fs::exists(ddir / "prep.cfg")) max_len = prep_config(KeyValues::load((ddir / "prep.cfg").string()).section("prep")).max_len;
  IngestFilters keep_all;
  keep_all.min_words = 0;
  keep_all.automated_authors.clear();
  keep_all.require_label = false;
  std::vector<Document> docs;
  for (const auto& raw : ingest_jsonl(fs::path(input), keep_all)) {
    Document d = encode_document(raw, ds.tm_vocab, ds.lm_vocab, max_len);
    d.time_index = bucket_index(raw.timestamp, ds.origin, ds.granularity);
    docs.push_back(std::move(d));
  }
  if (docs.empty()) throw DataError("no documents in " + input);
  const ForecastConfig fc = forecast_config(ctx.kv.section("forecast"));
  const EvalSettings es = eval_settings(ctx.kv.section("eval"));
  const Training tr(ds, ck.model.cfg.kind);
  const TrainData<double>& td = tr.data;
  GaussianNoise<double> noise(es.seed);
  const ForecastResult fr = predict_future(ck.model, td.W, td.first_index, pointers(docs), fc, noise);
  fs::create_directories(ctx.out);
  write_predictions_csv(ctx.out / "predictions.csv", pointers(docs), fr, &ds.scaler, false);
  *ctx.report << "scored " << docs.size() << " documents into " << (ctx.out / "predictions.csv").string() << "\n";
  return kExitOk;
}

int cmd_topics(const Context& ctx, const std::string& data, const std::string& model, int n) {
  if (n < 1) throw UsageError("topics: --n must be positive");
  const Dataset ds = load_dataset(data_dir(ctx, data));
  auto ck = load_model(model_dir(ctx, model), ds);
  require_topic_model(ck.model, "topics");
  const auto top = top_words(topic_word_matrix(ck.model.gen), n, &ds.tm_vocab);
  fs::create_directories(ctx.out);
  std::ofstream out(ctx.out / "topics.txt", std::ios::trunc);
  for (const auto& ids : top) {
    std::string line;
    for (int id : ids) line += (line.empty() ? "" : " ") + ds.tm_vocab.token(id);
    out << line << "\n";
    *ctx.report << line << "\n";
  }
  return kExitOk;
}

// Per history slice and topic: mean of the posterior-mean theta of the
// slice's training documents and a band of two standard deviations.
int cmd_timeline(const Context& ctx, const std::string& data, const std::string& model) {
  const Dataset ds = load_dataset(data_dir(ctx, data));
  auto ck = load_model(model_dir(ctx, model), ds);
  Model<double>& m = ck.model;
  require_topic_model(m, "timeline");
  const Training tr(ds, m.cfg.kind);
  const TrainData<double>& td = tr.data;
  ZeroNoise<double> zero;
  const LatentTrajectory<double> chain = encode_global(m, td.W, zero);
  const int T = ds.T_history();
  const auto K = static_cast<Eigen::Index>(m.cfg.K);
  MatXd sum = MatXd::Zero(T, K), sum2 = MatXd::Zero(T, K);
  std::vector<int> count(static_cast<std::size_t>(T), 0);
  for (const auto& d : ds.select(Split::Train)) {
    if (d.time_index < 0 || d.time_index >= T) continue;
    VecXd w = VecXd::Zero(m.cfg.V);
    bow_accumulate(d.bow, w);
    const VecXd eta = chain.eta.row(chain_row(m.cfg, td.first_index, d.time_index)).transpose();
    const VecXd theta = decode_theta<double>(encode_local(m, w, eta, zero).first.mean, m.gen);
    sum.row(d.time_index) += theta.transpose();
    sum2.row(d.time_index) += theta.cwiseProduct(theta).transpose();
    ++count[static_cast<std::size_t>(d.time_index)];
  }
  fs::create_directories(ctx.out);
  std::ofstream out(ctx.out / "timeline.csv", std::ios::trunc);
  out << "time_index,topic,n,mean,lower,upper\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int t = 0; t < T; ++t)
    for (Eigen::Index k = 0; k < K; ++k) {
      const int n = count[static_cast<std::size_t>(t)];
      const double mean = n > 0 ? sum(t, k) / n : nan;
      const double var = n > 1 ? std::max(0.0, (sum2(t, k) - n * mean * mean) / (n - 1)) : (n == 1 ? 0.0 : nan);
      const double sd = std::sqrt(var);
      out << t << "," << k << "," << n << "," << num(mean) << "," << num(mean - 2 * sd) << "," << num(mean + 2 * sd)
          << "\n";
    }
  *ctx.report << "wrote " << T * K << " rows to " << (ctx.out / "timeline.csv").string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic topic-attention rating models over time-sliced corpora"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", "checkpoint format version " + std::to_string(kCheckpointVersion));

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  if (const char* env = std::getenv("DTAM_OUTPUT_DIR")) out_dir = env;
  if (out_dir.empty()) out_dir = "dtam_out";
  int threads = 1;
  bool deterministic = false, quiet = false;
  app.add_option("-c,--config", config_path, "Settings file (key = value lines under [section] headers)");
  app.add_option("-s,--set", overrides, "Override section.key=value; wins over the file")->allow_extra_args(false);
  app.add_option("-o,--out", out_dir, "Output directory (default $DTAM_OUTPUT_DIR or ./dtam_out)");
  app.add_option("--threads", threads, "Upper bound on worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", deterministic, "Single-threaded, no wall-clock fields in outputs");
  app.add_flag("-q,--quiet", quiet, "No progress lines");

  std::string data, model, input;
  int n_top = 30;
  app.add_subcommand("sample", "Sample a synthetic corpus ([scenario] settings)");
  auto* ingest = app.add_subcommand("ingest", "Build vocabularies, splits and timeline files ([prep] settings)");
  ingest->add_option("-i,--input", input, "JSONL corpus (default <out>/corpus.jsonl)");
  auto* trn = app.add_subcommand("train", "Train a model; writes <out>/model and <out>/history.csv");
  auto* grid = app.add_subcommand("gridsearch", "Grid search ([grid] axes); writes <out>/leaderboard.csv");
  auto* ev = app.add_subcommand("eval", "R2, PPL-DC, PPL-P and TC on the prediction window");
  auto* pred = app.add_subcommand("predict", "Score a JSONL of future documents");
  pred->add_option("-i,--input", input, "JSONL documents")->required();
  auto* topics = app.add_subcommand("topics", "Top words per topic");
  topics->add_option("-n,--n", n_top, "Words per topic");
  auto* timeline = app.add_subcommand("timeline", "Per-slice topic proportions with two-sd bands as CSV");
  for (auto* sub : {trn, grid, ev, pred, topics, timeline})
    sub->add_option("-d,--data", data, "Dataset directory (default <out>/data)");
  for (auto* sub : {ev, pred, topics, timeline})
    sub->add_option("-m,--model", model, "Checkpoint directory (default <out>/model)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    Context ctx;
    if (!config_path.empty()) ctx.kv = KeyValues::load(config_path);
    for (const auto& o : overrides) ctx.kv.set(o);
    check_settings(ctx.kv);
    ctx.out = out_dir;
    ctx.threads = threads;
    ctx.deterministic = deterministic;
    ctx.quiet = quiet;
    ctx.report = &out;
    ctx.log = &err;

    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "sample") return cmd_sample(ctx);
    if (name == "ingest") return cmd_ingest(ctx, input);
    if (name == "train") return cmd_train(ctx, data);
    if (name == "gridsearch") return cmd_gridsearch(ctx, data);
    if (name == "eval") return cmd_eval(ctx, data, model);
    if (name == "predict") return cmd_predict(ctx, data, model, input);
    if (name == "topics") return cmd_topics(ctx, data, model, n_top);
    return cmd_timeline(ctx, data, model);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace dtam
