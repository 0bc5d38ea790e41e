#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "forge/jsonl.hpp"

namespace forge::corpus {

struct TestCase {
  std::string stdin_text;
  std::string expected_stdout;
  /// Empty expected output is only legal when the source says so.
  bool empty_output_allowed = false;
};

struct QuestionRecord {
  std::string question_id;
  std::string source_dataset;
  std::string statement;
  std::vector<TestCase> tests;
  bool has_visual_input = false;
  bool has_custom_checker = false;
  bool uses_stdin_stdout = true;
  /// Pre-existing split tag of the source ("train", "test"); empty if none.
  std::string split;
};

struct HumanOrigin {};

struct TranslationOrigin {
  std::string model;
  std::string source_solution_id;
  int sample_index = 0;
};

using Origin = std::variant<HumanOrigin, TranslationOrigin>;

struct Unverified {};
struct Passed {};
struct Failed {
  std::string reason;
};

using Verification = std::variant<Unverified, Passed, Failed>;

struct SolutionRecord {
  std::string solution_id;
  std::string question_id;
  std::string language;
  std::string code;
  Origin origin = HumanOrigin{};
  Verification verification = Unverified{};

  bool is_synthetic() const { return std::holds_alternative<TranslationOrigin>(origin); }
  bool is_passed() const { return std::holds_alternative<Passed>(verification); }
};

/// Id given to the n-th human solution of a question in a given language.
std::string human_solution_id(const std::string& question_id, const std::string& language, size_t n);

/// Id given to the sample_index-th translation of a source solution.
std::string translation_solution_id(const std::string& source_solution_id,
                                    const std::string& target_language, int sample_index);

// JSON mapping, shared by ingestion and by every manifest the pipeline writes.
json to_json(const TestCase& t);
json to_json(const QuestionRecord& q);
json to_json(const SolutionRecord& s);
QuestionRecord question_from_json(const json& j);
SolutionRecord solution_from_json(const json& j);

/// Verified solutions per (question, language) cell, deduplicated by
/// code_hash(). Only verification=passed records may enter.
class ParallelCorpus {
 public:
  using Cell = std::vector<SolutionRecord>;

  /// Returns false if an identical program already sits in the cell.
  /// Throws ValidationError on a record that has not passed verification.
  bool insert(SolutionRecord record);

  /// Registers a question with no solutions yet, so it counts in N.
  void add_question(const std::string& question_id);

  const Cell& cell(const std::string& question_id, const std::string& language) const;
  bool contains_question(const std::string& question_id) const;

  std::vector<std::string> question_ids() const;
  std::vector<std::string> languages() const;
  size_t question_count() const { return entries_.size(); }
  size_t total_instances() const;

  const std::map<std::string, std::map<std::string, Cell>>& entries() const { return entries_; }

 private:
  std::map<std::string, std::map<std::string, Cell>> entries_;
  std::set<std::tuple<std::string, std::string, std::string>> seen_;
};

// --- ingestion -------------------------------------------------------------

struct IngestedItem {
  size_t line = 0;
  QuestionRecord question;
  std::vector<SolutionRecord> solutions;
};

struct IngestError {
  size_t line = 0;
  std::string message;
};

struct IngestResult {
  std::vector<IngestedItem> items;
  std::vector<IngestError> errors;
};

/// Only schema currently understood: one question object per line with its
/// tests and human solutions inline.
inline constexpr std::string_view kQuestionLinesFormat = "question-lines-v1";

/// Streams records in file order. Malformed lines go to on_error with their
/// line number; they never stop the stream. Throws IoError if unreadable and
/// ValidationError for an unknown format tag.
void ingest_dataset(const std::filesystem::path& path, std::string_view format,
                    const std::function<void(IngestedItem)>& on_item,
                    const std::function<void(IngestError)>& on_error);

IngestResult ingest_dataset(const std::filesystem::path& path,
                            std::string_view format = kQuestionLinesFormat);

/// Parses one input line into an item. Throws ValidationError describing the
/// first schema violation.
IngestedItem parse_question_line(const std::string& line);

// --- filtering -------------------------------------------------------------

enum class DropReason { ReservedSource, VisualInput, CustomChecker, NotStdinStdout, NoTests };

std::string_view to_string(DropReason reason);

struct FilterOptions {
  std::set<std::string> reserved_sources;
  bool require_stdin_stdout = true;
};

struct DroppedQuestion {
  QuestionRecord question;
  DropReason reason;
};

struct FilterResult {
  std::vector<QuestionRecord> kept;
  std::vector<DroppedQuestion> dropped;
};

/// Partitions questions. Each drop carries the first failing check in the
/// order reserved source, visual input, custom checker, not stdin/stdout, no
/// tests.
FilterResult filter_questions(std::vector<QuestionRecord> records, const FilterOptions& options);

// --- statistics ------------------------------------------------------------

struct StatsReport {
  size_t question_count = 0;
  std::vector<std::string> languages;  // the declared grid
  std::map<std::string, size_t> per_language;
  size_t total_instances = 0;
  size_t grid_cells = 0;
  size_t nonempty_cells = 0;
  /// Mean over the whole declared grid, empty cells included. Empty when the
  /// grid has no cells.
  std::optional<double> mean_per_cell;
  std::optional<double> mean_per_nonempty_cell;
  std::optional<double> coverage;
};

/// Summarizes cell sizes keyed by (question, language). `languages` declares
/// the grid; when empty the languages present are used.
StatsReport summarize_cells(const std::map<std::string, std::map<std::string, size_t>>& cells,
                            std::vector<std::string> languages = {});

StatsReport corpus_stats(const ParallelCorpus& corpus, std::vector<std::string> languages = {});

/// Rows of (metric, language, value); "undefined" for absent means.
std::string stats_csv(const StatsReport& report);

}  // namespace forge::corpus
