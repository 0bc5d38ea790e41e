#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "forge/corpus.hpp"

namespace forge::translate {

struct LanguageDescriptor {
  std::string long_name;   // "C++"
  std::string short_name;  // "cpp"; also the language id used across the toolkit

  bool operator==(const LanguageDescriptor&) const = default;
};

/// The eleven languages of the corpus: Python, C, C++, Java, C#, JavaScript,
/// Bash, Lua, Go, PHP, Ruby.
const std::vector<LanguageDescriptor>& builtin_languages();

/// Looks up a built-in language by short name. Throws ValidationError.
const LanguageDescriptor& language(std::string_view short_name);

/// Throws ValidationError unless short_name is non-empty and has no
/// whitespace.
void validate(const LanguageDescriptor& lang);

/// The translation prompt template, byte-identical to
/// assets/translation_prompt.txt.
std::string_view translation_prompt_template();

/// Fills {code}, {instruction}, {lg_long} and {lg_short} in one pass over the
/// template; substituted text is never rescanned, so placeholders inside the
/// user's code survive verbatim. Throws ValidationError on empty code or
/// instruction.
std::string render_translation_prompt(std::string_view code, std::string_view instruction,
                                      const LanguageDescriptor& target);

/// Contents of the last fenced block tagged with the target language, else of
/// the last untagged block. Fence lines are stripped, interior bytes kept.
/// Tags match the short or long name case-insensitively.
std::optional<std::string> extract_code_block(std::string_view response,
                                              const LanguageDescriptor& target);

struct SamplingParams {
  double temperature = 0.8;
  double top_p = 0.95;
  int max_tokens = 2048;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double backoff_multiplier = 2.0;
};

/// Request and response field names of a completion-style JSON API.
struct FieldMap {
  std::string prompt = "prompt";
  std::string model = "model";
  std::string temperature = "temperature";
  std::string top_p = "top_p";
  std::string max_tokens = "max_tokens";
  /// JSON pointer to the generated text in the response body.
  std::string text_pointer = "/choices/0/text";
};

struct EndpointConfig {
  std::string base_url;  // "http://host:port"
  std::string path = "/v1/completions";
  std::string model;
  /// Name of the environment variable holding the bearer token; empty for
  /// no auth.
  std::string token_env;
  std::chrono::seconds timeout{120};
  int max_concurrency = 4;
  RetryPolicy retry;
  FieldMap fields;
};

/// Throws ValidationError when a field is out of range.
void validate(const EndpointConfig& config);

struct CompletionRequest {
  std::string prompt;
  SamplingParams params;
  std::string idempotency_key;
  // Routing metadata; HTTP clients ignore it, replay clients key on it.
  std::string source_solution_id;
  std::string target_language;
  int sample_index = 0;
};

struct CompletionResult {
  /// HTTP status; 0 for transport failures and timeouts.
  int status = 0;
  std::string text;
  std::string error;

  bool ok() const { return status >= 200 && status < 300; }
};

/// Anything that turns a prompt into generated text. Implementations must be
/// safe to call from several threads at once.
class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  virtual CompletionResult complete(const CompletionRequest& request) = 0;
  virtual std::string model_id() const = 0;
};

/// Talks to a completion-style HTTP JSON endpoint.
class HttpCompletionClient : public CompletionClient {
 public:
  explicit HttpCompletionClient(EndpointConfig config);
  CompletionResult complete(const CompletionRequest& request) override;
  std::string model_id() const override { return config_.model; }

 private:
  EndpointConfig config_;
  std::string token_;
};

/// Key for resumable reruns: sha256 of the prompt and the sample index.
std::string idempotency_key(std::string_view prompt, int sample_index);

struct TranslationJob {
  corpus::SolutionRecord source_solution;
  std::string instruction;
  LanguageDescriptor target;
  int samples = 8;
  SamplingParams params;
};

struct SampleOutcome {
  int sample_index = 0;
  /// Set when the sample produced a record.
  std::optional<std::string> solution_id;
  std::string error;
  int attempts = 0;
  std::string idempotency_key;
  /// Raw generated text, kept so reruns can skip finished requests.
  std::optional<std::string> response_text;
};

struct TranslationResult {
  std::vector<corpus::SolutionRecord> records;  // ordered by sample index
  std::vector<SampleOutcome> outcomes;          // exactly one per sample index
  /// Non-empty when a client error aborted the job.
  std::string job_error;
};

struct TranslateOptions {
  RetryPolicy retry;
  int max_concurrency = 4;
  /// Previously seen responses by idempotency key; hits skip the request.
  const std::map<std::string, std::string>* response_cache = nullptr;
  std::function<void(std::chrono::milliseconds)> sleep =
      [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
};

/// Issues job.samples independent completions of the rendered prompt with at
/// most max_concurrency requests in flight. 429, 5xx and transport failures
/// retry with backoff and then fail only that sample; another 4xx stops the job, leaving
/// unstarted samples marked aborted. Throws ValidationError for an invalid
/// job.
TranslationResult translate_solution(const TranslationJob& job, CompletionClient& client,
                                     const TranslateOptions& options = {});

}  // namespace forge::translate
