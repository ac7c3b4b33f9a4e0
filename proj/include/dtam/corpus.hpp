#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dtam/numcore/types.hpp"

namespace dtam {

struct RawDocument {
  std::string id;
  std::string text;
  std::int64_t timestamp = 0;  // seconds since epoch, UTC
  double label = 0.0;
  std::optional<std::string> author;
};

struct IngestFilters {
  int min_words = 20;
  std::vector<std::string> automated_authors{"AutoModerator"};
  bool require_label = true;  // when false a missing label reads as NaN
};

struct IngestStats {
  std::size_t lines = 0;
  std::size_t kept = 0;
  std::size_t dropped_author = 0;
  std::size_t dropped_short = 0;
  std::size_t dropped_utf8 = 0;
};

bool valid_utf8(std::string_view s);

// One JSON object per line with keys id/text/timestamp/label (author optional).
// Blank lines are skipped. Lines that are not valid UTF-8 are dropped.
std::vector<RawDocument> ingest_jsonl(std::istream& in, const IngestFilters& filters = {}, IngestStats* stats = nullptr);
std::vector<RawDocument> ingest_jsonl(const std::filesystem::path& path, const IngestFilters& filters = {},
                                      IngestStats* stats = nullptr);
void write_jsonl(std::ostream& out, const std::vector<RawDocument>& docs);

// ---------------------------------------------------------------- tokenizer

using Lemmatizer = std::function<std::string(const std::string&)>;

// Lowercases ASCII, removes URLs, @mentions, HTML tags, punctuation and emoji,
// then splits on whitespace. Non-ASCII letters are kept as-is.
std::vector<std::string> tokenize(std::string_view text, const Lemmatizer& lemmatize = nullptr);

// ---------------------------------------------------------------- vocabulary

enum class VocabOrder {
  Descending,  // most frequent first
  Ascending,   // least frequent first
};

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> tokens, std::vector<int> doc_freq);

  int size() const { return static_cast<int>(tokens_.size()); }
  // -1 when absent.
  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int doc_freq(int id) const { return doc_freq_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<int>& doc_freqs() const { return doc_freq_; }
  std::uint64_t hash() const;

  void save_tsv(const std::filesystem::path& p) const;
  static Vocabulary load_tsv(const std::filesystem::path& p);

 private:
  std::vector<std::string> tokens_;
  std::vector<int> doc_freq_;
  std::unordered_map<std::string, int> index_;
};

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& docs, int min_df = 5, int max_size = 5000,
                            VocabOrder order = VocabOrder::Descending);

inline constexpr const char* kUnkToken = "<unk>";

// LM vocabulary: id 0 is <unk>, then every token with corpus frequency >=
// min_count, by descending frequency (ties lexicographic).
Vocabulary build_lm_vocabulary(const std::vector<std::vector<std::string>>& docs, int min_count = 2);

// ---------------------------------------------------------------- bag of words

// Sparse count vector, sorted by id, no zero entries.
using Bow = std::vector<std::pair<int, int>>;

Bow bow_encode(const std::vector<std::string>& tokens, const Vocabulary& vocab);
Bow bow_from_ids(const std::vector<int>& ids);
Bow bow_add(const Bow& a, const Bow& b);
int bow_total(const Bow& b);
void bow_accumulate(const Bow& b, Eigen::Ref<Eigen::VectorXd> dense);

std::vector<int> encode_ids(const std::vector<std::string>& tokens, const Vocabulary& vocab, bool drop_oov);

// ---------------------------------------------------------------- documents / timeline

struct Document {
  std::string id;
  std::int64_t timestamp = 0;
  int time_index = 0;         // absolute slice index from the dataset origin
  std::vector<int> lm_ids;    // LM token ids, truncated to max_len, OOV -> 0
  std::vector<int> tm_ids;    // in-vocabulary TM ids in document order
  Bow bow;                    // counts over tm_ids
  double rating = 0.0;        // scaled into [0,1]
  double raw_label = 0.0;
};

struct Granularity {
  enum Kind { Weekly, Monthly, Seconds } kind = Weekly;
  std::int64_t seconds = 0;  // used by Kind::Seconds

  static Granularity parse(const std::string& s);
  std::string str() const;
};

// Start of the bucket containing ts (UTC). Weeks start on Monday.
std::int64_t truncate_to(std::int64_t ts, const Granularity& g);
// Slice index of ts relative to an origin produced by truncate_to.
int bucket_index(std::int64_t ts, std::int64_t origin, const Granularity& g);
// Start timestamp of bucket `index`.
std::int64_t bucket_start(std::int64_t origin, int index, const Granularity& g);

struct Slice {
  int index = 0;  // absolute
  std::int64_t begin = 0;
  std::int64_t end = 0;  // exclusive
  std::vector<Document> docs;
  Eigen::VectorXd bow;  // W_t, dense length V
};

struct CorpusTimeline {
  int V = 0;
  std::vector<Slice> slices;

  int T() const { return static_cast<int>(slices.size()); }
  int first_index() const { return slices.empty() ? 0 : slices.front().index; }
  std::size_t num_docs() const;
  // Recomputes every W_t from its documents.
  void recompute_bows();
  // Throws DataError if a W_t disagrees with its documents or slices are out of order.
  void check() const;
  // T x V, each row L1-normalised (zero rows stay zero).
  Eigen::MatrixXd normalized_bows() const;
  std::vector<const Document*> documents() const;
};

// Docs must have time_index unset; it is assigned here. subsample_per_slice <= 0 keeps all.
CorpusTimeline time_bucketize(std::vector<Document> docs, const Granularity& g, int V, int subsample_per_slice = 0,
                              std::uint64_t seed = 0, std::int64_t* origin_out = nullptr);

// Rebuilds a timeline over absolute slice range [first, first + T) from a doc list.
CorpusTimeline make_timeline(const std::vector<Document>& docs, int V, int first, int T,
                             const std::vector<std::pair<std::int64_t, std::int64_t>>& bounds = {});

std::pair<CorpusTimeline, CorpusTimeline> temporal_split(const CorpusTimeline& tl, int n_prediction = 20);

struct RandomSplit {
  std::vector<Document> train, val, test;
  std::vector<std::string> warnings;
};

RandomSplit random_split(const CorpusTimeline& up_to_date, std::array<double, 3> ratios = {0.8, 0.1, 0.1},
                         std::uint64_t seed = 0);

// Halves the in-vocabulary token list at ceil(M/2). nullopt when M < 2.
std::optional<std::pair<Bow, Bow>> completion_split(const Document& doc);

// ---------------------------------------------------------------- labels

struct LabelScaler {
  double min = 0.0;
  double max = 1.0;

  static LabelScaler fit(const std::vector<double>& labels);
  // Clipped into [0,1] for labels outside the fitted range.
  double forward(double x) const;
  double forward_unclipped(double x) const { return (x - min) / (max - min); }
  double inverse(double y) const { return min + y * (max - min); }
};

// Drops docs whose label exceeds cap, then min-max scales the survivors.
std::pair<std::vector<RawDocument>, LabelScaler> normalize_labels(const std::vector<RawDocument>& docs,
                                                                  double cap = 50000.0);

// ---------------------------------------------------------------- dataset

enum class Split { Train, Val, Test, Future };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct PrepConfig {
  IngestFilters filters;
  double label_cap = 50000.0;
  Granularity granularity;
  int subsample_per_slice = 0;
  int n_prediction = 20;
  int min_df = 5;
  int max_vocab = 5000;
  VocabOrder vocab_order = VocabOrder::Descending;
  int lm_min_count = 2;
  int max_len = 120;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
};

// Everything `ingest` produces: vocabularies, scaler, split-tagged documents
// and the slice grid.
struct Dataset {
  Vocabulary tm_vocab;
  Vocabulary lm_vocab;
  LabelScaler scaler;
  double label_cap = 50000.0;
  Granularity granularity;
  std::int64_t origin = 0;
  int T_total = 0;
  int n_prediction = 0;
  std::vector<std::pair<std::int64_t, std::int64_t>> bounds;  // per absolute slice
  std::vector<Document> docs;
  std::vector<Split> splits;  // parallel to docs
  std::vector<std::string> warnings;

  int T_history() const { return T_total - n_prediction; }
  std::vector<Document> select(Split s) const;
  // Train-only timeline over the history slices.
  CorpusTimeline train_timeline() const;
  // Prediction-window timeline.
  CorpusTimeline future_timeline() const;

  void save(const std::filesystem::path& dir) const;
  static Dataset load(const std::filesystem::path& dir);
};

// Raw docs -> Dataset. Vocabularies are fitted on the history window only
// and the label scaler on the training split only.
Dataset prepare_dataset(std::vector<RawDocument> raw, const PrepConfig& cfg);

// Tokenize + encode a raw document against existing vocabularies (used for
// scoring new documents). time_index is left for the caller.
Document encode_document(const RawDocument& raw, const Vocabulary& tm, const Vocabulary& lm, int max_len);

}  // namespace dtam
