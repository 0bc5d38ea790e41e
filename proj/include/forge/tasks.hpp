#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/sandbox.hpp"

namespace forge::tasks {

struct GenerationTaskInstance {
  corpus::QuestionRecord question;
  std::string target_language;
  std::string prompt_template_id = "codegen-v1";
};

struct ValidationTaskInstance {
  /// Caller-chosen key that survives balancing.
  std::string id;
  corpus::QuestionRecord question;
  std::string candidate_code;
  std::string candidate_language;
  std::optional<bool> label;
};

// --- code generation -------------------------------------------------------

struct Reward {
  int value = 0;  // 0 or 1
  std::string diagnostic;
  std::optional<sandbox::Verdict> verdict;
};

/// 1 iff the code extracted from the response is accepted on the question's
/// tests. Never throws for bad responses: a missing code block, an unknown
/// language or an empty test suite all give 0 with a diagnostic.
Reward codegen_reward(const GenerationTaskInstance& instance, const std::string& response, sandbox::Judge& judge,
                      const sandbox::ResourceLimits& limits = {});

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

struct BootstrapOptions {
  std::size_t resamples = 1000;
  std::uint64_t seed = 0;
  double level = 0.95;
};

struct PassAtK {
  std::size_t k = 0;
  std::size_t questions = 0;
  double pass_at_1 = 0.0;
  double pass_at_k = 0.0;
  Interval ci_1;
  Interval ci_k;
};

/// flags[q] holds the k sample outcomes of question q. pass@1 is the mean of
/// all k*Q flags; pass@k is the fraction of questions with at least one
/// passing sample. Intervals are percentile bootstraps over questions.
/// Throws ValidationError for ragged or empty tables.
PassAtK pass_at_k(const std::vector<std::vector<bool>>& flags, const BootstrapOptions& bootstrap = {});

/// Combinatorial estimator 1 - C(n-c, k) / C(n, k) for n samples with c
/// correct.
double unbiased_pass_at_k(std::size_t n, std::size_t c, std::size_t k);

/// Mean of unbiased_pass_at_k over questions, for any k <= samples.
double estimate_pass_at_k(const std::vector<std::vector<bool>>& flags, std::size_t k);

// --- code validation -------------------------------------------------------

enum class BoolVerdict { True, False, Unparseable };

struct VerdictPattern {
  std::vector<std::string> true_words = {"true", "correct"};
  std::vector<std::string> false_words = {"false", "incorrect"};
};

/// The last standalone verdict word in the text, case-insensitive.
BoolVerdict extract_boolean_verdict(std::string_view response, const VerdictPattern& pattern = {});

struct BalanceResult {
  std::map<std::string, std::vector<ValidationTaskInstance>> by_language;
  std::vector<std::string> warnings;
};

/// Per language, keeps min(#true, #false) instances of each class, chosen by
/// a seeded draw; kept instances stay in input order. Languages missing a
/// class are dropped with a warning.
BalanceResult balance_eval_set(const std::map<std::string, std::vector<ValidationTaskInstance>>& by_language,
                               std::uint64_t seed);

struct Accuracy {
  double value = 0.0;
  Interval ci;
  std::size_t n = 0;
  std::size_t unparseable = 0;
};

/// Fraction of predictions equal to their label; unparseable counts as
/// wrong. Throws ValidationError on a length mismatch or empty input.
Accuracy validation_accuracy(const std::vector<BoolVerdict>& predictions, const std::vector<bool>& labels,
                             const BootstrapOptions& bootstrap = {});

// --- RL split ----------------------------------------------------------------

struct RlSplit {
  std::vector<corpus::QuestionRecord> train;
  std::vector<corpus::QuestionRecord> test;
  std::size_t dropped_custom_checker = 0;
  std::size_t dropped_not_stdin_stdout = 0;
  std::size_t untagged = 0;
};

/// Drops custom-checker and non-stdin/stdout records and keeps the source's
/// own train/test tags. Records with any other tag are counted as untagged.
RlSplit build_codeforces_rl_split(std::vector<corpus::QuestionRecord> records);

// --- reports -------------------------------------------------------------------

struct EvalRow {
  std::string language;
  std::string metric;
  double value = 0.0;
  Interval ci;
  std::size_t n = 0;
};

/// Columns language,metric,value,ci_low,ci_high,n.
std::string eval_csv(const std::vector<EvalRow>& rows);

// --- reward service ------------------------------------------------------------

/// Scores generations for an external RL trainer.
///
/// Request:  {"question_id": str, "response_text": str, "language": str}
/// Response: {"question_id": str, "reward": 0|1, "diagnostic": str}
/// A request that cannot be scored yields reward 0 and an "error" field.
class RewardService {
 public:
  RewardService(std::map<std::string, corpus::QuestionRecord> questions, sandbox::Judge& judge,
                sandbox::ResourceLimits limits = {});

  json handle(const json& request);
  /// One request per input line, one response per output line, in order.
  void serve_lines(std::istream& in, std::ostream& out);
  /// POST /reward (one object) and POST /rewards (line-delimited batch);
  /// GET /health. Blocks until stop() is called from another thread.
  bool serve_http(const std::string& host, int port);
  /// Binds to an ephemeral port; returns it, or -1.
  int bind_http(const std::string& host);
  bool listen_after_bind();
  void stop();

 private:
  struct Server;
  std::map<std::string, corpus::QuestionRecord> questions_;
  sandbox::Judge& judge_;
  sandbox::ResourceLimits limits_;
  std::shared_ptr<Server> server_;
};

}  // namespace forge::tasks
