#include "forge/corpus.hpp"

#include <algorithm>
#include <sstream>

#include "forge/error.hpp"
#include "forge/hash.hpp"

namespace forge::corpus {

namespace {

template <typename T>
T require(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + field + "'");
  if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw ValidationError(std::string("field '") + field + "' must be a string");
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) throw ValidationError(std::string("field '") + field + "' must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer()) throw ValidationError(std::string("field '") + field + "' must be an integer");
  }
  return it->get<T>();
}

template <typename T>
T optional_field(const json& j, const char* field, T fallback) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) return fallback;
  return require<T>(j, field);
}

const json& require_array(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + field + "'");
  if (!it->is_array()) throw ValidationError(std::string("field '") + field + "' must be an array");
  return *it;
}

TestCase test_from_json(const json& j, size_t index) {
  if (!j.is_object()) throw ValidationError("tests[" + std::to_string(index) + "] must be an object");
  TestCase t;
  try {
    t.stdin_text = require<std::string>(j, "stdin");
    t.expected_stdout = require<std::string>(j, "expected_stdout");
    t.empty_output_allowed = optional_field<bool>(j, "allow_empty_output", false);
  } catch (const ValidationError& e) {
    throw ValidationError("tests[" + std::to_string(index) + "]: " + e.what());
  }
  if (t.expected_stdout.empty() && !t.empty_output_allowed) {
    throw ValidationError("tests[" + std::to_string(index) +
                          "]: empty expected_stdout without allow_empty_output");
  }
  return t;
}

}  // namespace

std::string human_solution_id(const std::string& question_id, const std::string& language, size_t n) {
  return question_id + ":" + language + ":" + std::to_string(n);
}

std::string translation_solution_id(const std::string& source_solution_id,
                                    const std::string& target_language, int sample_index) {
  return source_solution_id + ">" + target_language + "#" + std::to_string(sample_index);
}

json to_json(const TestCase& t) {
  json j{{"stdin", t.stdin_text}, {"expected_stdout", t.expected_stdout}};
  if (t.empty_output_allowed) j["allow_empty_output"] = true;
  return j;
}

json to_json(const QuestionRecord& q) {
  json tests = json::array();
  for (const auto& t : q.tests) tests.push_back(to_json(t));
  json j{{"question_id", q.question_id},
         {"source_dataset", q.source_dataset},
         {"statement", q.statement},
         {"tests", std::move(tests)},
         {"has_visual_input", q.has_visual_input},
         {"has_custom_checker", q.has_custom_checker},
         {"uses_stdin_stdout", q.uses_stdin_stdout}};
  if (!q.split.empty()) j["split"] = q.split;
  return j;
}

json to_json(const SolutionRecord& s) {
  json origin;
  if (const auto* t = std::get_if<TranslationOrigin>(&s.origin)) {
    origin = {{"kind", "synthetic-translation"},
              {"model", t->model},
              {"source_solution_id", t->source_solution_id},
              {"sample_index", t->sample_index}};
  } else {
    origin = {{"kind", "human"}};
  }
  json verification;
  if (std::holds_alternative<Passed>(s.verification)) {
    verification = {{"status", "passed"}};
  } else if (const auto* f = std::get_if<Failed>(&s.verification)) {
    verification = {{"status", "failed"}, {"reason", f->reason}};
  } else {
    verification = {{"status", "unverified"}};
  }
  return {{"solution_id", s.solution_id}, {"question_id", s.question_id},
          {"language", s.language},       {"code", s.code},
          {"origin", std::move(origin)},  {"verification", std::move(verification)}};
}

QuestionRecord question_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("record must be an object");
  QuestionRecord q;
  q.question_id = require<std::string>(j, "question_id");
  if (q.question_id.empty()) throw ValidationError("field 'question_id' is empty");
  q.source_dataset = require<std::string>(j, "source_dataset");
  q.statement = require<std::string>(j, "statement");
  const json& tests = require_array(j, "tests");
  for (size_t i = 0; i < tests.size(); ++i) q.tests.push_back(test_from_json(tests[i], i));
  q.has_visual_input = require<bool>(j, "has_visual_input");
  q.has_custom_checker = require<bool>(j, "has_custom_checker");
  q.uses_stdin_stdout = require<bool>(j, "uses_stdin_stdout");
  q.split = optional_field<std::string>(j, "split", "");
  return q;
}

SolutionRecord solution_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("solution must be an object");
  SolutionRecord s;
  s.solution_id = require<std::string>(j, "solution_id");
  s.question_id = require<std::string>(j, "question_id");
  s.language = require<std::string>(j, "language");
  s.code = require<std::string>(j, "code");
  if (auto it = j.find("origin"); it != j.end()) {
    std::string kind = require<std::string>(*it, "kind");
    if (kind == "synthetic-translation") {
      s.origin = TranslationOrigin{require<std::string>(*it, "model"),
                                   require<std::string>(*it, "source_solution_id"),
                                   require<int>(*it, "sample_index")};
    } else if (kind != "human") {
      throw ValidationError("unknown origin kind '" + kind + "'");
    }
  }
  if (auto it = j.find("verification"); it != j.end()) {
    std::string status = require<std::string>(*it, "status");
    if (status == "passed") {
      s.verification = Passed{};
    } else if (status == "failed") {
      s.verification = Failed{optional_field<std::string>(*it, "reason", "")};
    } else if (status != "unverified") {
      throw ValidationError("unknown verification status '" + status + "'");
    }
  }
  return s;
}

// --- ParallelCorpus ----------------------------------------------------------

bool ParallelCorpus::insert(SolutionRecord record) {
  if (!record.is_passed()) {
    throw ValidationError("corpus only accepts verified solutions: " + record.solution_id);
  }
  auto key = std::make_tuple(record.question_id, record.language, code_hash(record.code));
  if (!seen_.insert(std::move(key)).second) return false;
  entries_[record.question_id][record.language].push_back(std::move(record));
  return true;
}

void ParallelCorpus::add_question(const std::string& question_id) { entries_[question_id]; }

const ParallelCorpus::Cell& ParallelCorpus::cell(const std::string& question_id,
                                                 const std::string& language) const {
  static const Cell kEmpty;
  auto q = entries_.find(question_id);
  if (q == entries_.end()) return kEmpty;
  auto c = q->second.find(language);
  return c == q->second.end() ? kEmpty : c->second;
}

bool ParallelCorpus::contains_question(const std::string& question_id) const {
  return entries_.count(question_id) != 0;
}

std::vector<std::string> ParallelCorpus::question_ids() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [qid, _] : entries_) out.push_back(qid);
  return out;
}

std::vector<std::string> ParallelCorpus::languages() const {
  std::set<std::string> langs;
  for (const auto& [_, cells] : entries_) {
    for (const auto& [lang, cell] : cells) {
      if (!cell.empty()) langs.insert(lang);
    }
  }
  return {langs.begin(), langs.end()};
}

size_t ParallelCorpus::total_instances() const {
  size_t n = 0;
  for (const auto& [_, cells] : entries_) {
    for (const auto& [__, cell] : cells) n += cell.size();
  }
  return n;
}

// --- ingestion ---------------------------------------------------------------

IngestedItem parse_question_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("invalid JSON: ") + e.what());
  }
  IngestedItem item;
  item.question = question_from_json(j);
  const json& solutions = require_array(j, "solutions");
  std::map<std::string, size_t> per_language;
  for (size_t i = 0; i < solutions.size(); ++i) {
    const json& s = solutions[i];
    if (!s.is_object()) throw ValidationError("solutions[" + std::to_string(i) + "] must be an object");
    SolutionRecord rec;
    try {
      rec.language = require<std::string>(s, "language");
      rec.code = require<std::string>(s, "code");
    } catch (const ValidationError& e) {
      throw ValidationError("solutions[" + std::to_string(i) + "]: " + e.what());
    }
    rec.question_id = item.question.question_id;
    size_t n = per_language[rec.language]++;
    rec.solution_id = optional_field<std::string>(
        s, "solution_id", human_solution_id(rec.question_id, rec.language, n));
    item.solutions.push_back(std::move(rec));
  }
  return item;
}

void ingest_dataset(const std::filesystem::path& path, std::string_view format,
                    const std::function<void(IngestedItem)>& on_item,
                    const std::function<void(IngestError)>& on_error) {
  if (format != kQuestionLinesFormat) {
    throw ValidationError("unknown dataset format '" + std::string(format) + "'");
  }
  for_each_line(path, [&](size_t number, const std::string& line) {
    IngestedItem item;
    try {
      item = parse_question_line(line);
    } catch (const ValidationError& e) {
      on_error({number, e.what()});
      return;
    }
    item.line = number;
    on_item(std::move(item));
  });
}

IngestResult ingest_dataset(const std::filesystem::path& path, std::string_view format) {
  IngestResult result;
  ingest_dataset(
      path, format, [&](IngestedItem item) { result.items.push_back(std::move(item)); },
      [&](IngestError err) { result.errors.push_back(std::move(err)); });
  return result;
}

// --- filtering -----------------------------------------------------------------

std::string_view to_string(DropReason reason) {
  switch (reason) {
    case DropReason::ReservedSource: return "reserved-source";
    case DropReason::VisualInput: return "visual-input";
    case DropReason::CustomChecker: return "custom-checker";
    case DropReason::NotStdinStdout: return "not-stdin-stdout";
    case DropReason::NoTests: return "no-tests";
  }
  return "unknown";
}

FilterResult filter_questions(std::vector<QuestionRecord> records, const FilterOptions& options) {
  FilterResult result;
  for (auto& q : records) {
    std::optional<DropReason> reason;
    if (options.reserved_sources.count(q.source_dataset)) {
      reason = DropReason::ReservedSource;
    } else if (q.has_visual_input) {
      reason = DropReason::VisualInput;
    } else if (options.require_stdin_stdout && q.has_custom_checker) {
      reason = DropReason::CustomChecker;
    } else if (options.require_stdin_stdout && !q.uses_stdin_stdout) {
      reason = DropReason::NotStdinStdout;
    } else if (q.tests.empty()) {
      reason = DropReason::NoTests;
    }
    if (reason) {
      result.dropped.push_back({std::move(q), *reason});
    } else {
      result.kept.push_back(std::move(q));
    }
  }
  return result;
}

// --- statistics ------------------------------------------------------------------

StatsReport summarize_cells(const std::map<std::string, std::map<std::string, size_t>>& cells,
                            std::vector<std::string> languages) {
  StatsReport r;
  if (languages.empty()) {
    std::set<std::string> present;
    for (const auto& [_, row] : cells) {
      for (const auto& [lang, n] : row) {
        if (n > 0) present.insert(lang);
      }
    }
    languages.assign(present.begin(), present.end());
  }
  r.languages = languages;
  r.question_count = cells.size();
  for (const auto& lang : languages) r.per_language[lang] = 0;
  for (const auto& [_, row] : cells) {
    for (const auto& lang : languages) {
      auto it = row.find(lang);
      size_t n = it == row.end() ? 0 : it->second;
      r.per_language[lang] += n;
      r.total_instances += n;
      if (n > 0) ++r.nonempty_cells;
    }
  }
  r.grid_cells = r.question_count * languages.size();
  if (r.grid_cells > 0) {
    r.mean_per_cell = static_cast<double>(r.total_instances) / static_cast<double>(r.grid_cells);
    r.coverage = static_cast<double>(r.nonempty_cells) / static_cast<double>(r.grid_cells);
  }
  if (r.nonempty_cells > 0) {
    r.mean_per_nonempty_cell =
        static_cast<double>(r.total_instances) / static_cast<double>(r.nonempty_cells);
  }
  return r;
}

StatsReport corpus_stats(const ParallelCorpus& corpus, std::vector<std::string> languages) {
  std::map<std::string, std::map<std::string, size_t>> cells;
  for (const auto& [qid, row] : corpus.entries()) {
    auto& out = cells[qid];
    for (const auto& [lang, cell] : row) out[lang] = cell.size();
  }
  return summarize_cells(cells, std::move(languages));
}

std::string stats_csv(const StatsReport& r) {
  auto fmt = [](const std::optional<double>& v) {
    if (!v) return std::string("undefined");
    std::ostringstream ss;
    ss.precision(6);
    ss << std::fixed << *v;
    return ss.str();
  };
  std::ostringstream out;
  out << "metric,language,value\n";
  out << "questions,," << r.question_count << "\n";
  for (const auto& lang : r.languages) {
    out << "instances," << lang << "," << r.per_language.at(lang) << "\n";
  }
  out << "total_instances,," << r.total_instances << "\n";
  out << "grid_cells,," << r.grid_cells << "\n";
  out << "nonempty_cells,," << r.nonempty_cells << "\n";
  out << "mean_per_cell,," << fmt(r.mean_per_cell) << "\n";
  out << "mean_per_nonempty_cell,," << fmt(r.mean_per_nonempty_cell) << "\n";
  out << "coverage,," << fmt(r.coverage) << "\n";
  return out.str();
}

}  // namespace forge::corpus
