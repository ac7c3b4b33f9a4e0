#include "dtam/corpus.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dtam/numcore/blob.hpp"

namespace dtam {

using json = nlohmann::json;

// ---------------------------------------------------------------- ingest

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    for (int k = 1; k <= extra; ++k) {
      if (i + k >= n) return false;
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // overlong forms, surrogates, out of range
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000)) return false;
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

namespace {

int whitespace_words(std::string_view s) {
  int n = 0;
  bool in = false;
  for (char ch : s) {
    const bool sp = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (!sp && !in) ++n;
    in = !sp;
  }
  return n;
}

std::int64_t json_timestamp(const json& v, std::size_t line) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number()) return static_cast<std::int64_t>(std::floor(v.get<double>()));
  throw DataError("line " + std::to_string(line) + ": timestamp must be a number");
}

}  // namespace

std::vector<RawDocument> ingest_jsonl(std::istream& in, const IngestFilters& filters, IngestStats* stats) {
  IngestStats st;
  std::vector<RawDocument> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    ++st.lines;
    if (!valid_utf8(line)) {
      ++st.dropped_utf8;
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(lineno) + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError("line " + std::to_string(lineno) + ": expected a JSON object");
    for (const char* key : {"id", "text", "timestamp", "label"})
      if (!j.contains(key) && (filters.require_label || std::string_view(key) != "label")) throw DataError("line " + std::to_string(lineno) + ": missing required key '" + key + "'");

    RawDocument d;
    const auto& jid = j["id"];
    d.id = jid.is_string() ? jid.get<std::string>() : jid.dump();
    if (!j["text"].is_string()) throw DataError("line " + std::to_string(lineno) + ": text must be a string");
    d.text = j["text"].get<std::string>();
    d.timestamp = json_timestamp(j["timestamp"], lineno);
    if (j.contains("label")) {
      if (!j["label"].is_number()) throw DataError("line " + std::to_string(lineno) + ": label must be a number");
      d.label = j["label"].get<double>();
    } else {
      d.label = std::numeric_limits<double>::quiet_NaN();
    }
    if (j.contains("author") && j["author"].is_string()) d.author = j["author"].get<std::string>();

    if (d.author && std::find(filters.automated_authors.begin(), filters.automated_authors.end(), *d.author) !=
                        filters.automated_authors.end()) {
      ++st.dropped_author;
      continue;
    }
    if (whitespace_words(d.text) < filters.min_words) {
      ++st.dropped_short;
      continue;
    }
    if (d.timestamp <= 0) throw DataError("line " + std::to_string(lineno) + ": timestamp must be positive");
    out.push_back(std::move(d));
  }
  st.kept = out.size();
  if (stats) *stats = st;
  return out;
}

std::vector<RawDocument> ingest_jsonl(const std::filesystem::path& path, const IngestFilters& filters,
                                      IngestStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return ingest_jsonl(in, filters, stats);
}

void write_jsonl(std::ostream& out, const std::vector<RawDocument>& docs) {
  for (const auto& d : docs) {
    json j;
    j["id"] = d.id;
    j["text"] = d.text;
    j["timestamp"] = d.timestamp;
    j["label"] = d.label;
    if (d.author) j["author"] = *d.author;
    out << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------- tokenizer

namespace {

bool is_emoji(std::uint32_t cp) {
  return (cp >= 0x1F000 && cp <= 0x1FAFF) || (cp >= 0x2600 && cp <= 0x27BF) || (cp >= 0x2300 && cp <= 0x23FF) ||
         (cp >= 0x2B00 && cp <= 0x2BFF) || cp == 0xFE0F || cp == 0x200D || (cp >= 0xE0020 && cp <= 0xE007F);
}

// Replaces emoji sequences with spaces; input must be valid UTF-8 (invalid
// bytes are passed through).
std::string strip_emoji(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    int len = c < 0x80 ? 1 : (c & 0xE0) == 0xC0 ? 2 : (c & 0xF0) == 0xE0 ? 3 : (c & 0xF8) == 0xF0 ? 4 : 1;
    if (i + len > s.size()) len = 1;
    std::uint32_t cp = len == 1 ? c : (c & (0x7F >> len));
    for (int k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    if (len > 1 && is_emoji(cp))
      out += ' ';
    else
      out.append(s.substr(i, len));
    i += len;
  }
  return out;
}

std::string strip_html(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '<' && i + 1 < s.size() && (std::isalpha(static_cast<unsigned char>(s[i + 1])) || s[i + 1] == '/' || s[i + 1] == '!')) {
      const auto close = s.find('>', i);
      if (close != std::string_view::npos) {
        out += ' ';
        i = close;
        continue;
      }
    }
    if (c == '&') {
      std::size_t k = i + 1;
      while (k < s.size() && k - i <= 8 && (std::isalnum(static_cast<unsigned char>(s[k])) || s[k] == '#')) ++k;
      if (k < s.size() && s[k] == ';' && k > i + 1) {
        out += ' ';
        i = k;
        continue;
      }
    }
    out += c;
  }
  return out;
}

bool is_url(const std::string& w) {
  return w.find("://") != std::string::npos || w.rfind("www.", 0) == 0;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, const Lemmatizer& lemmatize) {
  const std::string cleaned = strip_emoji(strip_html(text));
  std::vector<std::string> out;
  std::istringstream ss(cleaned);
  std::string w;
  while (ss >> w) {
    std::string lw;
    lw.reserve(w.size());
    for (char ch : w) lw += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (is_url(lw) || lw.front() == '@') continue;
    // apostrophes join ("don't" -> "dont"); other punctuation separates
    std::string piece;
    auto flush = [&] {
      if (piece.empty()) return;
      out.push_back(lemmatize ? lemmatize(piece) : piece);
      if (out.back().empty()) out.pop_back();
      piece.clear();
    };
    for (char ch : lw) {
      const auto uc = static_cast<unsigned char>(ch);
      if (ch == '\'') continue;
      if (uc < 0x80 && std::ispunct(uc)) {
        flush();
        continue;
      }
      piece += ch;
    }
    flush();
  }
  return out;
}

// ---------------------------------------------------------------- vocabulary

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::vector<int> doc_freq)
    : tokens_(std::move(tokens)), doc_freq_(std::move(doc_freq)) {
  if (tokens_.size() != doc_freq_.size()) throw DataError("vocabulary: token/frequency length mismatch");
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) throw DataError("vocabulary: duplicate token '" + tokens_[i] + "'");
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a64("vocab");
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

void Vocabulary::save_tsv(const std::filesystem::path& p) const {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << i << '\t' << tokens_[i] << '\t' << doc_freq_[i] << '\n';
}

Vocabulary Vocabulary::load_tsv(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  std::vector<std::string> toks;
  std::vector<int> df;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) throw DataError(p.string() + ":" + std::to_string(lineno) + ": expected id<TAB>token<TAB>df");
    const int id = std::stoi(line.substr(0, t1));
    if (id != static_cast<int>(toks.size())) throw DataError(p.string() + ":" + std::to_string(lineno) + ": ids must be dense and ordered");
    toks.push_back(line.substr(t1 + 1, t2 - t1 - 1));
    df.push_back(std::stoi(line.substr(t2 + 1)));
  }
  return Vocabulary(std::move(toks), std::move(df));
}

namespace {

std::map<std::string, int> document_frequency(const std::vector<std::vector<std::string>>& docs) {
  std::map<std::string, int> df;
  for (const auto& d : docs) {
    std::vector<std::string> u(d.begin(), d.end());
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    for (auto& t : u) ++df[t];
  }
  return df;
}

}  // namespace

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& docs, int min_df, int max_size, VocabOrder order) {
  if (max_size < 1) throw DomainError("build_vocabulary: max_size must be >= 1");
  std::vector<std::pair<std::string, int>> kept;
  for (auto& [tok, n] : document_frequency(docs))
    if (n >= min_df) kept.emplace_back(tok, n);
  if (kept.empty()) throw DataError("build_vocabulary: no token reaches document frequency " + std::to_string(min_df));
  std::stable_sort(kept.begin(), kept.end(), [order](const auto& a, const auto& b) {
    if (a.second != b.second) return order == VocabOrder::Descending ? a.second > b.second : a.second < b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(kept.size()) > max_size) kept.resize(static_cast<std::size_t>(max_size));
  std::vector<std::string> toks;
  std::vector<int> df;
  for (auto& [t, n] : kept) {
    toks.push_back(t);
    df.push_back(n);
  }
  return Vocabulary(std::move(toks), std::move(df));
}

Vocabulary build_lm_vocabulary(const std::vector<std::vector<std::string>>& docs, int min_count) {
  std::map<std::string, int> freq;
  for (const auto& d : docs)
    for (const auto& t : d) ++freq[t];
  const auto df = document_frequency(docs);
  std::vector<std::pair<std::string, int>> kept;
  for (auto& [t, n] : freq)
    if (n >= min_count && t != kUnkToken) kept.emplace_back(t, n);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> toks{kUnkToken};
  std::vector<int> dfs{0};
  for (auto& [t, n] : kept) {
    toks.push_back(t);
    dfs.push_back(df.at(t));
  }
  return Vocabulary(std::move(toks), std::move(dfs));
}

// ---------------------------------------------------------------- bag of words

Bow bow_from_ids(const std::vector<int>& ids) {
  std::vector<int> s(ids);
  std::sort(s.begin(), s.end());
  Bow b;
  for (int id : s) {
    if (!b.empty() && b.back().first == id)
      ++b.back().second;
    else
      b.emplace_back(id, 1);
  }
  return b;
}

std::vector<int> encode_ids(const std::vector<std::string>& tokens, const Vocabulary& vocab, bool drop_oov) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    const int id = vocab.id(t);
    if (id >= 0)
      ids.push_back(id);
    else if (!drop_oov)
      ids.push_back(0);
  }
  return ids;
}

Bow bow_encode(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  return bow_from_ids(encode_ids(tokens, vocab, true));
}

Bow bow_add(const Bow& a, const Bow& b) {
  Bow out;
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first))
      out.push_back(a[i++]);
    else if (i == a.size() || b[j].first < a[i].first)
      out.push_back(b[j++]);
    else {
      out.emplace_back(a[i].first, a[i].second + b[j].second);
      ++i;
      ++j;
    }
  }
  return out;
}

int bow_total(const Bow& b) {
  int n = 0;
  for (auto& [id, c] : b) n += c;
  return n;
}

void bow_accumulate(const Bow& b, Eigen::Ref<Eigen::VectorXd> dense) {
  for (auto& [id, c] : b) {
    require_dims(id >= 0 && id < dense.size(), "bow_accumulate: id " + std::to_string(id) + " out of range");
    dense(id) += c;
  }
}

// ---------------------------------------------------------------- time

Granularity Granularity::parse(const std::string& s) {
  Granularity g;
  if (s == "weekly" || s == "week") {
    g.kind = Weekly;
  } else if (s == "monthly" || s == "month") {
    g.kind = Monthly;
  } else {
    std::string num = s;
    if (num.size() > 1 && num.back() == 's') num.pop_back();
    try {
      std::size_t used = 0;
      g.seconds = std::stoll(num, &used);
      if (used != num.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw UsageError("unknown granularity '" + s + "' (expected weekly, monthly or <seconds>s)");
    }
    if (g.seconds <= 0) throw UsageError("granularity width must be positive");
    g.kind = Seconds;
  }
  return g;
}

std::string Granularity::str() const {
  switch (kind) {
    case Weekly: return "weekly";
    case Monthly: return "monthly";
    case Seconds: return std::to_string(seconds) + "s";
  }
  return "weekly";
}

namespace {

constexpr std::int64_t kDay = 86400;

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::chrono::year_month_day ymd_of(std::int64_t ts) {
  return std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{floor_div(ts, kDay)}}};
}

std::int64_t ts_of(std::chrono::year_month_day ymd) {
  return static_cast<std::int64_t>(std::chrono::sys_days{ymd}.time_since_epoch().count()) * kDay;
}

}  // namespace

std::int64_t truncate_to(std::int64_t ts, const Granularity& g) {
  switch (g.kind) {
    case Granularity::Weekly: {
      const std::int64_t days = floor_div(ts, kDay);
      const std::int64_t since_monday = ((days + 3) % 7 + 7) % 7;  // 1970-01-01 was a Thursday
      return (days - since_monday) * kDay;
    }
    case Granularity::Monthly: {
      const auto ymd = ymd_of(ts);
      return ts_of(ymd.year() / ymd.month() / std::chrono::day{1});
    }
    case Granularity::Seconds: return floor_div(ts, g.seconds) * g.seconds;
  }
  return ts;
}

int bucket_index(std::int64_t ts, std::int64_t origin, const Granularity& g) {
  switch (g.kind) {
    case Granularity::Weekly: return static_cast<int>(floor_div(ts - origin, 7 * kDay));
    case Granularity::Monthly: {
      const auto a = ymd_of(origin);
      const auto b = ymd_of(ts);
      return (static_cast<int>(b.year()) - static_cast<int>(a.year())) * 12 +
             (static_cast<int>(static_cast<unsigned>(b.month())) - static_cast<int>(static_cast<unsigned>(a.month())));
    }
    case Granularity::Seconds: return static_cast<int>(floor_div(ts - origin, g.seconds));
  }
  return 0;
}

std::int64_t bucket_start(std::int64_t origin, int index, const Granularity& g) {
  switch (g.kind) {
    case Granularity::Weekly: return origin + static_cast<std::int64_t>(index) * 7 * kDay;
    case Granularity::Monthly: {
      const auto a = ymd_of(origin);
      const auto ym = std::chrono::year_month{a.year(), a.month()} + std::chrono::months{index};
      return ts_of(ym / std::chrono::day{1});
    }
    case Granularity::Seconds: return origin + static_cast<std::int64_t>(index) * g.seconds;
  }
  return origin;
}

// ---------------------------------------------------------------- timeline

std::size_t CorpusTimeline::num_docs() const {
  std::size_t n = 0;
  for (const auto& s : slices) n += s.docs.size();
  return n;
}

void CorpusTimeline::recompute_bows() {
  for (auto& s : slices) {
    s.bow = Eigen::VectorXd::Zero(V);
    for (const auto& d : s.docs) bow_accumulate(d.bow, s.bow);
  }
}

void CorpusTimeline::check() const {
  if (slices.empty()) throw DataError("timeline has no slices");
  for (std::size_t t = 0; t < slices.size(); ++t) {
    const auto& s = slices[t];
    if (t > 0 && s.index != slices[t - 1].index + 1) throw DataError("timeline slices are not consecutive");
    if (s.bow.size() != V) throw DataError("slice " + std::to_string(s.index) + ": W_t has wrong length");
    Eigen::VectorXd w = Eigen::VectorXd::Zero(V);
    for (const auto& d : s.docs) {
      if (d.time_index != s.index) throw DataError("document " + d.id + " sits in the wrong slice");
      bow_accumulate(d.bow, w);
    }
    if (w != s.bow) throw DataError("slice " + std::to_string(s.index) + ": W_t differs from the sum of document BoWs");
  }
}

Eigen::MatrixXd CorpusTimeline::normalized_bows() const {
  Eigen::MatrixXd W(T(), V);
  for (int t = 0; t < T(); ++t) {
    const double tot = slices[t].bow.sum();
    W.row(t) = tot > 0 ? Eigen::RowVectorXd(slices[t].bow.transpose() / tot) : Eigen::RowVectorXd::Zero(V);
  }
  return W;
}

std::vector<const Document*> CorpusTimeline::documents() const {
  std::vector<const Document*> out;
  for (const auto& s : slices)
    for (const auto& d : s.docs) out.push_back(&d);
  return out;
}

namespace {

// Keeps min(n, size) positions chosen uniformly, in original order.
std::vector<std::size_t> subsample_positions(std::size_t size, int n, std::uint64_t seed) {
  std::vector<std::size_t> pos(size);
  std::iota(pos.begin(), pos.end(), 0);
  if (n <= 0 || static_cast<std::size_t>(n) >= size) return pos;
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  pos.resize(static_cast<std::size_t>(n));
  std::sort(pos.begin(), pos.end());
  return pos;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

CorpusTimeline time_bucketize(std::vector<Document> docs, const Granularity& g, int V, int subsample_per_slice,
                              std::uint64_t seed, std::int64_t* origin_out) {
  CorpusTimeline tl;
  tl.V = V;
  if (docs.empty()) throw DataError("time_bucketize: no documents");
  std::int64_t tmin = docs.front().timestamp;
  for (const auto& d : docs) tmin = std::min(tmin, d.timestamp);
  const std::int64_t origin = truncate_to(tmin, g);
  if (origin_out) *origin_out = origin;
  int T = 0;
  for (auto& d : docs) {
    d.time_index = bucket_index(d.timestamp, origin, g);
    T = std::max(T, d.time_index + 1);
  }
  tl.slices.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    tl.slices[t].index = t;
    tl.slices[t].begin = bucket_start(origin, t, g);
    tl.slices[t].end = bucket_start(origin, t + 1, g);
  }
  for (auto& d : docs) tl.slices[d.time_index].docs.push_back(std::move(d));
  if (subsample_per_slice > 0) {
    for (auto& s : tl.slices) {
      auto keep = subsample_positions(s.docs.size(), subsample_per_slice, mix_seed(seed, static_cast<std::uint64_t>(s.index)));
      std::vector<Document> kept;
      kept.reserve(keep.size());
      for (auto p : keep) kept.push_back(std::move(s.docs[p]));
      s.docs = std::move(kept);
    }
  }
  tl.recompute_bows();
  return tl;
}

CorpusTimeline make_timeline(const std::vector<Document>& docs, int V, int first, int T,
                             const std::vector<std::pair<std::int64_t, std::int64_t>>& bounds) {
  if (T < 1) throw DataError("make_timeline: need at least one slice");
  CorpusTimeline tl;
  tl.V = V;
  tl.slices.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    tl.slices[t].index = first + t;
    const std::size_t abs = static_cast<std::size_t>(first + t);
    if (abs < bounds.size()) {
      tl.slices[t].begin = bounds[abs].first;
      tl.slices[t].end = bounds[abs].second;
    }
  }
  for (const auto& d : docs) {
    const int t = d.time_index - first;
    if (t < 0 || t >= T) throw DataError("make_timeline: document " + d.id + " outside the slice range");
    tl.slices[t].docs.push_back(d);
  }
  tl.recompute_bows();
  return tl;
}

std::pair<CorpusTimeline, CorpusTimeline> temporal_split(const CorpusTimeline& tl, int n_prediction) {
  if (n_prediction < 1) throw DataError("temporal_split: n_prediction must be >= 1");
  if (tl.T() <= n_prediction)
    throw DataError("temporal_split: need more than " + std::to_string(n_prediction) + " slices, have " + std::to_string(tl.T()));
  CorpusTimeline up, pred;
  up.V = pred.V = tl.V;
  const int cut = tl.T() - n_prediction;
  up.slices.assign(tl.slices.begin(), tl.slices.begin() + cut);
  pred.slices.assign(tl.slices.begin() + cut, tl.slices.end());
  return {std::move(up), std::move(pred)};
}

RandomSplit random_split(const CorpusTimeline& up_to_date, std::array<double, 3> ratios, std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
    throw DomainError("random_split: ratios must be nonnegative and sum to 1");
  RandomSplit out;
  for (const auto& s : up_to_date.slices) {
    const std::size_t n = s.docs.size();
    if (n == 0) continue;
    if (n < 3) {
      out.warnings.push_back("slice " + std::to_string(s.index) + " has " + std::to_string(n) +
                             " document(s); assigned wholly to train");
      for (const auto& d : s.docs) out.train.push_back(d);
      continue;
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(s.index)));
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[1] + 0.5));
    const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[2] + 0.5));
    const std::size_t n_train = n - std::min(n, n_val + n_test);
    std::vector<int> tag(n);
    for (std::size_t k = 0; k < n; ++k) tag[perm[k]] = k < n_train ? 0 : k < n_train + n_val ? 1 : 2;
    for (std::size_t i = 0; i < n; ++i) (tag[i] == 0 ? out.train : tag[i] == 1 ? out.val : out.test).push_back(s.docs[i]);
  }
  return out;
}

std::optional<std::pair<Bow, Bow>> completion_split(const Document& doc) {
  const std::size_t M = doc.tm_ids.size();
  if (M < 2) return std::nullopt;
  const std::size_t cut = (M + 1) / 2;
  std::vector<int> a(doc.tm_ids.begin(), doc.tm_ids.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<int> b(doc.tm_ids.begin() + static_cast<std::ptrdiff_t>(cut), doc.tm_ids.end());
  return std::make_pair(bow_from_ids(a), bow_from_ids(b));
}

// ---------------------------------------------------------------- labels

LabelScaler LabelScaler::fit(const std::vector<double>& labels) {
  if (labels.empty()) throw DataError("label scaler: no labels");
  const auto [lo, hi] = std::minmax_element(labels.begin(), labels.end());
  if (!(*hi > *lo)) throw DataError("label scaler: all labels are equal");
  return LabelScaler{*lo, *hi};
}

double LabelScaler::forward(double x) const { return std::clamp(forward_unclipped(x), 0.0, 1.0); }

std::pair<std::vector<RawDocument>, LabelScaler> normalize_labels(const std::vector<RawDocument>& docs, double cap) {
  std::vector<RawDocument> kept;
  for (const auto& d : docs) {
    if (d.label < 0) throw DataError("document " + d.id + ": negative label");
    if (d.label <= cap) kept.push_back(d);
  }
  std::vector<double> labels;
  for (const auto& d : kept) labels.push_back(d.label);
  const LabelScaler sc = LabelScaler::fit(labels);
  for (auto& d : kept) d.label = sc.forward(d.label);
  return {std::move(kept), sc};
}

// ---------------------------------------------------------------- dataset

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Future: return "future";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "future") return Split::Future;
  throw DataError("unknown split tag '" + s + "'");
}

std::vector<Document> Dataset::select(Split s) const {
  std::vector<Document> out;
  for (std::size_t i = 0; i < docs.size(); ++i)
    if (splits[i] == s) out.push_back(docs[i]);
  return out;
}

CorpusTimeline Dataset::train_timeline() const {
  return make_timeline(select(Split::Train), tm_vocab.size(), 0, T_history(), bounds);
}

CorpusTimeline Dataset::future_timeline() const {
  return make_timeline(select(Split::Future), tm_vocab.size(), T_history(), n_prediction, bounds);
}

Document encode_document(const RawDocument& raw, const Vocabulary& tm, const Vocabulary& lm, int max_len) {
  const auto toks = tokenize(raw.text);
  Document d;
  d.id = raw.id;
  d.timestamp = raw.timestamp;
  d.raw_label = raw.label;
  d.tm_ids = encode_ids(toks, tm, true);
  d.bow = bow_from_ids(d.tm_ids);
  d.lm_ids = encode_ids(toks, lm, false);
  if (max_len > 0 && static_cast<int>(d.lm_ids.size()) > max_len) d.lm_ids.resize(static_cast<std::size_t>(max_len));
  return d;
}

Dataset prepare_dataset(std::vector<RawDocument> raw, const PrepConfig& cfg) {
  Dataset ds;
  ds.label_cap = cfg.label_cap;
  ds.granularity = cfg.granularity;
  ds.n_prediction = cfg.n_prediction;

  std::vector<RawDocument> kept;
  for (auto& d : raw) {
    if (d.label < 0) throw DataError("document " + d.id + ": negative label");
    if (d.label <= cfg.label_cap) kept.push_back(std::move(d));
  }
  if (kept.empty()) throw DataError("no documents survive the label cap");

  std::int64_t tmin = kept.front().timestamp;
  for (const auto& d : kept) tmin = std::min(tmin, d.timestamp);
  ds.origin = truncate_to(tmin, cfg.granularity);

  // bucket, then subsample each slice
  std::vector<std::vector<std::size_t>> by_slice;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const int t = bucket_index(kept[i].timestamp, ds.origin, cfg.granularity);
    if (t >= static_cast<int>(by_slice.size())) by_slice.resize(static_cast<std::size_t>(t) + 1);
    by_slice[t].push_back(i);
  }
  ds.T_total = static_cast<int>(by_slice.size());
  if (ds.T_total <= cfg.n_prediction)
    throw DataError("need more than " + std::to_string(cfg.n_prediction) + " time slices, found " + std::to_string(ds.T_total));
  for (int t = 0; t <= ds.T_total; ++t) {
    if (t < ds.T_total)
      ds.bounds.emplace_back(bucket_start(ds.origin, t, cfg.granularity), bucket_start(ds.origin, t + 1, cfg.granularity));
  }

  std::vector<std::pair<int, std::size_t>> order;  // (slice, raw index)
  for (int t = 0; t < ds.T_total; ++t) {
    auto keep = subsample_positions(by_slice[t].size(), cfg.subsample_per_slice, mix_seed(cfg.seed, static_cast<std::uint64_t>(t)));
    for (auto p : keep) order.emplace_back(t, by_slice[t][p]);
  }

  std::vector<std::vector<std::string>> tokens(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) tokens[k] = tokenize(kept[order[k].second].text);

  const int T_hist = ds.T_total - cfg.n_prediction;
  std::vector<std::vector<std::string>> history;
  for (std::size_t k = 0; k < order.size(); ++k)
    if (order[k].first < T_hist) history.push_back(tokens[k]);
  ds.tm_vocab = build_vocabulary(history, cfg.min_df, cfg.max_vocab, cfg.vocab_order);
  ds.lm_vocab = build_lm_vocabulary(history, cfg.lm_min_count);

  std::vector<Document> hist_docs, future_docs;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const RawDocument& r = kept[order[k].second];
    Document d;
    d.id = r.id;
    d.timestamp = r.timestamp;
    d.time_index = order[k].first;
    d.raw_label = r.label;
    d.tm_ids = encode_ids(tokens[k], ds.tm_vocab, true);
    d.bow = bow_from_ids(d.tm_ids);
    d.lm_ids = encode_ids(tokens[k], ds.lm_vocab, false);
    if (cfg.max_len > 0 && static_cast<int>(d.lm_ids.size()) > cfg.max_len) d.lm_ids.resize(static_cast<std::size_t>(cfg.max_len));
    if (d.lm_ids.empty()) {
      ds.warnings.push_back("document " + d.id + " has no tokens after cleaning; dropped");
      continue;
    }
    (d.time_index < T_hist ? hist_docs : future_docs).push_back(std::move(d));
  }

  CorpusTimeline hist = make_timeline(hist_docs, ds.tm_vocab.size(), 0, T_hist, ds.bounds);
  RandomSplit rs = random_split(hist, cfg.ratios, cfg.seed);
  for (auto& w : rs.warnings) ds.warnings.push_back(w);

  std::vector<double> train_labels;
  for (const auto& d : rs.train) train_labels.push_back(d.raw_label);
  ds.scaler = LabelScaler::fit(train_labels);

  auto emit = [&](std::vector<Document>& v, Split s) {
    for (auto& d : v) {
      d.rating = ds.scaler.forward(d.raw_label);
      ds.docs.push_back(std::move(d));
      ds.splits.push_back(s);
    }
  };
  emit(rs.train, Split::Train);
  emit(rs.val, Split::Val);
  emit(rs.test, Split::Test);
  emit(future_docs, Split::Future);
  // stable order: by slice, then split
  std::vector<std::size_t> idx(ds.docs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return ds.docs[a].time_index < ds.docs[b].time_index; });
  std::vector<Document> sd;
  std::vector<Split> ss;
  for (auto i : idx) {
    sd.push_back(std::move(ds.docs[i]));
    ss.push_back(ds.splits[i]);
  }
  ds.docs = std::move(sd);
  ds.splits = std::move(ss);
  return ds;
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void Dataset::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  tm_vocab.save_tsv(dir / "vocab_tm.tsv");
  lm_vocab.save_tsv(dir / "vocab_lm.tsv");
  {
    std::ofstream out(dir / "scaler.txt", std::ios::trunc);
    out << "min " << fmt_double(scaler.min) << "\nmax " << fmt_double(scaler.max) << "\ncap " << fmt_double(label_cap) << "\n";
  }
  {
    std::ofstream out(dir / "documents.jsonl", std::ios::trunc);
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const auto& d = docs[i];
      json j;
      j["id"] = d.id;
      j["timestamp"] = d.timestamp;
      j["t"] = d.time_index;
      j["split"] = to_string(splits[i]);
      j["rating"] = d.rating;
      j["label"] = d.raw_label;
      j["lm"] = d.lm_ids;
      j["tm"] = d.tm_ids;
      out << j.dump() << "\n";
    }
    if (!out) throw DataError("failed writing documents.jsonl");
  }
  {
    std::ofstream out(dir / "timeline.txt", std::ios::trunc);
    out << "dtam-timeline 1\n";
    out << "T " << T_total << " V " << tm_vocab.size() << " history " << T_history() << " granularity " << granularity.str()
        << " origin " << origin << "\n";
    for (int t = 0; t < T_total; ++t) {
      std::size_t n = 0;
      for (const auto& d : docs) n += d.time_index == t;
      out << "slice " << t << " " << bounds[t].first << " " << bounds[t].second << " " << n << "\n";
    }
    for (int t = 0; t < T_total; ++t) {
      out << "docs " << t;
      for (std::size_t i = 0; i < docs.size(); ++i)
        if (docs[i].time_index == t) out << " " << i;
      out << "\n";
    }
  }
  if (!warnings.empty()) {
    std::ofstream out(dir / "warnings.txt", std::ios::trunc);
    for (const auto& w : warnings) out << w << "\n";
  }
}

Dataset Dataset::load(const std::filesystem::path& dir) {
  Dataset ds;
  ds.tm_vocab = Vocabulary::load_tsv(dir / "vocab_tm.tsv");
  ds.lm_vocab = Vocabulary::load_tsv(dir / "vocab_lm.tsv");
  {
    std::ifstream in(dir / "scaler.txt");
    if (!in) throw DataError("cannot open " + (dir / "scaler.txt").string());
    std::string k;
    double v;
    while (in >> k >> v) {
      if (k == "min") ds.scaler.min = v;
      else if (k == "max") ds.scaler.max = v;
      else if (k == "cap") ds.label_cap = v;
    }
  }
  {
    std::ifstream in(dir / "timeline.txt");
    if (!in) throw DataError("cannot open " + (dir / "timeline.txt").string());
    std::string line;
    std::getline(in, line);
    if (line != "dtam-timeline 1") throw DataError("timeline.txt: unsupported header");
    std::getline(in, line);
    std::istringstream hs(line);
    std::string k, gran;
    int V = 0, hist = 0;
    hs >> k >> ds.T_total >> k >> V >> k >> hist >> k >> gran >> k >> ds.origin;
    if (!hs) throw DataError("timeline.txt: malformed header");
    if (V != ds.tm_vocab.size()) throw DataError("timeline.txt: V does not match vocab_tm.tsv");
    ds.granularity = Granularity::parse(gran);
    ds.n_prediction = ds.T_total - hist;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      ls >> k;
      if (k == "slice") {
        int t;
        std::int64_t b, e;
        ls >> t >> b >> e;
        ds.bounds.emplace_back(b, e);
      }
    }
  }
  {
    std::ifstream in(dir / "documents.jsonl");
    if (!in) throw DataError("cannot open " + (dir / "documents.jsonl").string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        json j = json::parse(line);
        Document d;
        d.id = j.at("id").get<std::string>();
        d.timestamp = j.at("timestamp").get<std::int64_t>();
        d.time_index = j.at("t").get<int>();
        d.rating = j.at("rating").get<double>();
        d.raw_label = j.at("label").get<double>();
        d.lm_ids = j.at("lm").get<std::vector<int>>();
        d.tm_ids = j.at("tm").get<std::vector<int>>();
        d.bow = bow_from_ids(d.tm_ids);
        ds.splits.push_back(parse_split(j.at("split").get<std::string>()));
        ds.docs.push_back(std::move(d));
      } catch (const json::exception& e) {
        throw DataError("documents.jsonl:" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  return ds;
}

}  // namespace dtam
