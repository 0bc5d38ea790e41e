#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/kernels.hpp"
#include "forge/rng.hpp"

namespace forge::align {

using kernels::Matrix;

/// Echo-embedding input: the program repeated inside a rewrite instruction.
/// Pooling uses the second copy, whose tokens have attended to the whole
/// program once already.
struct EchoPrompt {
  std::string text;
  std::size_t span_begin = 0;  // character offsets of the second copy
  std::size_t span_end = 0;

  std::string_view span() const { return std::string_view(text).substr(span_begin, span_end - span_begin); }
};

/// "Rewrite the following code: {x}. The rewritten code: {x}". Throws
/// ValidationError on empty code.
EchoPrompt render_echo_template(std::string_view code);

/// Hidden states of one text: layers[l] is tokens x hidden, and
/// offsets[t] the [begin, end) character range of token t.
struct TokenStates {
  std::vector<Matrix> layers;
  std::vector<std::pair<std::size_t, std::size_t>> offsets;
};

/// Tokens whose character range overlaps [span_begin, span_end).
std::pair<std::size_t, std::size_t> token_span(const TokenStates& states, std::size_t span_begin,
                                               std::size_t span_end);

/// Per layer, the arithmetic mean of rows [token_begin, token_end). Throws
/// ValidationError for an empty range; `label` names the program in the
/// message.
std::vector<std::vector<double>> pool_representation(const std::vector<Matrix>& layers, std::size_t token_begin,
                                                     std::size_t token_end, std::string_view label = {});

struct PooledEmbedding {
  std::vector<std::vector<double>> layers;  // layer -> hidden vector
  std::pair<std::size_t, std::size_t> token_span_used{0, 0};
};

/// Source of per-layer program representations.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual std::size_t layer_count() const = 0;
  virtual std::size_t hidden_size() const = 0;
  /// Mean-pooled representation of the characters [span_begin, span_end).
  virtual PooledEmbedding embed(const std::string& text, std::size_t span_begin, std::size_t span_end) = 0;
};

/// Provider that exposes token-level states; pooling is done here.
class TokenLevelProvider : public EmbeddingProvider {
 public:
  virtual TokenStates token_states(const std::string& text) = 0;
  PooledEmbedding embed(const std::string& text, std::size_t span_begin, std::size_t span_end) override;
};

/// Deterministic lexical stand-in for a model: tokens are maximal runs of
/// word characters or single punctuation marks; a token's layer-l state is a
/// seeded random projection of its text mixed, with weight growing in l, with
/// the running mean of previous tokens. Useful for desk-scale runs and
/// tests, not as a measurement of any real model.
class HashingProvider : public TokenLevelProvider {
 public:
  HashingProvider(std::size_t layers, std::size_t hidden, std::uint64_t seed);
  std::string id() const override;
  std::size_t layer_count() const override { return layers_; }
  std::size_t hidden_size() const override { return hidden_; }
  TokenStates token_states(const std::string& text) override;

 private:
  std::size_t layers_;
  std::size_t hidden_;
  std::uint64_t seed_;
};

/// Remote provider speaking the JSON wire format
///   request  {"text", "span_start", "span_end"}
///   response {"layers": [[float...]...], "token_span_used": [begin, end]}
class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(std::string base_url, std::string path, std::string provider_id, std::size_t layers,
                        std::size_t hidden, int timeout_seconds = 120);
  std::string id() const override { return id_; }
  std::size_t layer_count() const override { return layers_; }
  std::size_t hidden_size() const override { return hidden_; }
  PooledEmbedding embed(const std::string& text, std::size_t span_begin, std::size_t span_end) override;

 private:
  std::string base_url_;
  std::string path_;
  std::string id_;
  std::size_t layers_;
  std::size_t hidden_;
  int timeout_seconds_;
};

/// Wire-format (de)serialization, shared with the HTTP provider.
json embedding_request_json(const std::string& text, std::size_t span_begin, std::size_t span_end);
PooledEmbedding embedding_from_json(const json& response);
json to_json(const PooledEmbedding& e);

/// Caches another provider's results on disk, one file per
/// (provider id, text hash, span).
class CachingProvider : public EmbeddingProvider {
 public:
  CachingProvider(EmbeddingProvider& inner, std::filesystem::path directory);
  std::string id() const override { return inner_.id(); }
  std::size_t layer_count() const override { return inner_.layer_count(); }
  std::size_t hidden_size() const override { return inner_.hidden_size(); }
  PooledEmbedding embed(const std::string& text, std::size_t span_begin, std::size_t span_end) override;

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  EmbeddingProvider& inner_;
  std::filesystem::path directory_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

// --- metrics ---------------------------------------------------------------

/// Fraction of rows i with cos(a_i, b_i) strictly greater than every
/// cos(a_i, b_j), j != i. Ties count as misses. Requires equal row counts
/// N >= 2 and no zero rows (ValidationError otherwise).
double retrieval_accuracy(const Matrix& a, const Matrix& b);

enum class Baseline {
  /// Mean over all j != i.
  Exact,
  /// One j != i drawn uniformly for each i.
  SingleSample,
  /// One random derangement j = pi(i) shared by all rows.
  Derangement,
};

/// Mean over i of cos(a_i, b_i) minus a non-parallel baseline cos(a_i, b_j).
/// `rng` is required for the sampled baselines.
double adjusted_cosine(const Matrix& a, const Matrix& b, Baseline baseline, Rng* rng = nullptr);

namespace serial {

double retrieval_accuracy(const Matrix& a, const Matrix& b);
double adjusted_cosine(const Matrix& a, const Matrix& b, Baseline baseline, Rng* rng = nullptr);

}  // namespace serial

// --- sweeps ----------------------------------------------------------------

/// Index-aligned programs: programs[lang][i] are translations of each other.
struct ParallelProgramSet {
  std::vector<std::string> languages;
  std::vector<std::string> question_ids;
  std::map<std::string, std::vector<std::string>> programs;
  /// None of question_ids occurs in the excluded (SFT) question set.
  bool disjoint_from_training = false;

  std::size_t size() const { return question_ids.size(); }
};

void validate(const ParallelProgramSet& set);

inline constexpr std::size_t kDefaultHeldOutSize = 312;

/// Picks up to n questions having a verified solution in every language and
/// not in `exclude`, and one solution per language, all seeded.
ParallelProgramSet build_program_set(const corpus::ParallelCorpus& corpus, const std::vector<std::string>& languages,
                                     std::size_t n, std::uint64_t seed,
                                     const std::set<std::string>& exclude = {});

struct AlignmentRow {
  std::size_t layer = 0;
  std::string lang_a;
  std::string lang_b;
  std::string metric;  // "retrieval_accuracy" or "adjusted_cosine"
  double value = 0.0;
};

struct AlignmentReport {
  std::string provider_id;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::size_t layers = 0;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<AlignmentRow> rows;  // layer-major, then pair, then metric
};

struct SweepOptions {
  std::uint64_t seed = 0;
  Baseline baseline = Baseline::SingleSample;
};

/// Embeds every program through the echo template and, for every layer and
/// ordered pair (a, b), computes retrieval accuracy a->b and adjusted cosine.
/// Throws ValidationError if the provider returns a different layer count
/// or width than it declares.
AlignmentReport layer_sweep(const ParallelProgramSet& set, EmbeddingProvider& provider,
                            const std::vector<std::pair<std::string, std::string>>& pairs,
                            const SweepOptions& options = {});

/// Columns layer,lang_a,lang_b,metric,value.
std::string alignment_csv(const AlignmentReport& report);

/// Per layer and metric, the mean over language pairs. Columns
/// layer,metric,value.
std::string averaged_series_csv(const AlignmentReport& report);

}  // namespace forge::align
