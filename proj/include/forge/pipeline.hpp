#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "forge/align.hpp"
#include "forge/jsonl.hpp"
#include "forge/sandbox.hpp"
#include "forge/translator.hpp"

namespace forge::pipeline {

namespace fs = std::filesystem;

/// Stage names in dependency order.
inline const std::vector<std::string> kStages = {"ingest", "translate", "verify", "mix", "evaluate", "align"};

struct IngestConfig {
  fs::path dataset;
  std::string format = "question-lines-v1";
  std::set<std::string> reserved_sources;
  bool require_stdin_stdout = true;
  /// Optional CodeForces-style dump to split into RL train/test.
  std::optional<fs::path> rl_dataset;
};

struct TranslateConfig {
  /// "http" or "replay".
  std::string client = "http";
  translate::EndpointConfig endpoint;
  /// Canned responses for the replay client, one JSON object per line:
  /// {"source_solution_id", "target_language", "sample_index", "text"}.
  std::optional<fs::path> replay;
  std::string source_language = "python";
  std::vector<std::string> target_languages;
  int samples = 8;
  translate::SamplingParams sampling;
};

struct VerifyConfig {
  unsigned workers = 1;
  sandbox::ResourceLimits limits;
  bool short_circuit = true;
  /// "process" or "container".
  std::string isolation = "process";
  std::vector<std::string> container_prefix;
};

struct MixConfig {
  std::vector<std::string> languages;
  std::size_t budget = 0;
  std::string monolingual_language;
  /// Empty disables the oracle mixture.
  std::string oracle_language;
  std::optional<fs::path> general;
};

struct EvaluateConfig {
  /// {"question_id", "language", "sample_index", "response_text"} per line.
  std::optional<fs::path> codegen;
  /// {"question_id", "language", "label", "response_text"} per line.
  std::optional<fs::path> validation;
  std::size_t resamples = 1000;
  double level = 0.95;
};

struct AlignConfig {
  std::vector<std::string> languages;
  std::size_t n = align::kDefaultHeldOutSize;
  /// "hashing" or "http".
  std::string provider = "hashing";
  std::size_t layers = 8;
  std::size_t hidden = 64;
  std::uint64_t provider_seed = 0;
  std::string base_url;
  std::string path = "/embed";
  std::string provider_id;
  align::Baseline baseline = align::Baseline::SingleSample;
  /// Drop questions used by the mix stage from the held-out set.
  bool exclude_sft_questions = true;
  std::optional<fs::path> cache_dir;
};

struct PipelineConfig {
  fs::path base_dir;  // relative paths resolve against this
  fs::path work_dir;
  std::optional<fs::path> runners;  // default: built-in registry
  std::map<std::string, std::uint64_t> seeds;

  std::optional<IngestConfig> ingest;
  std::optional<TranslateConfig> translate;
  std::optional<VerifyConfig> verify;
  std::optional<MixConfig> mix;
  std::optional<EvaluateConfig> evaluate;
  std::optional<AlignConfig> align;

  /// The interpolated document, used to fingerprint stage parameters.
  json document;

  std::uint64_t seed(std::string_view stage) const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Replaces ${NAME} with the variable's value. Throws ValidationError for an
/// unset variable or an unterminated reference. "$${" yields a literal "${".
std::string interpolate_env(std::string_view text, const EnvLookup& env);

/// Parses a configuration document. Overrides are "stage=value" seed
/// assignments applied after parsing. Throws ValidationError when a path
/// does not resolve, a stage section lacks its seed, or a field is invalid.
PipelineConfig parse_config(const json& document, const fs::path& base_dir,
                            const std::vector<std::string>& seed_overrides = {}, const EnvLookup& env = {});
PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& seed_overrides = {},
                           const EnvLookup& env = {});

struct ManifestEntry {
  std::string stage;
  /// "completed" or "skipped".
  std::string status;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // work-dir relative path -> sha256
  std::string params_hash;
  json params;
  json counts = json::object();
  std::string started_at;
  double wall_seconds = 0.0;
};

json to_json(const ManifestEntry& e);
ManifestEntry manifest_entry_from_json(const json& j);

fs::path manifest_path(const PipelineConfig& config);
std::vector<ManifestEntry> read_manifest(const PipelineConfig& config);

/// Collaborators a caller may inject; unset ones are built from the config.
struct StageContext {
  bool resume = false;
  translate::CompletionClient* client = nullptr;
  sandbox::Judge* judge = nullptr;
  align::EmbeddingProvider* provider = nullptr;
  /// Replaces the retry sleep of the translator (tests pass a no-op).
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// Runs one stage and appends its manifest entry. If the previous entry for
/// the stage saw the same input hashes and parameters and its outputs are
/// intact, nothing runs and a "skipped" entry is appended.
///
/// Throws UpstreamMissingError naming the prerequisite stage when its
/// outputs are absent, ValidationError when the stage is not configured.
ManifestEntry run_stage(const PipelineConfig& config, std::string_view stage, const StageContext& context = {});

enum class ReportKind { Stats, Mixture, Eval, Alignment };
ReportKind report_kind(std::string_view name);

/// Writes reports/<kind>.csv (plus companions) under the work dir, and a
/// gnuplot script when `plot` is set. Returns the files written.
std::vector<fs::path> emit_report(const PipelineConfig& config, ReportKind kind, bool plot = false);

/// Replays canned completions keyed by (source solution, target, sample).
/// Unknown keys fail as transport errors.
class ReplayClient : public translate::CompletionClient {
 public:
  explicit ReplayClient(const fs::path& path, std::string model = "replay");
  translate::CompletionResult complete(const translate::CompletionRequest& request) override;
  std::string model_id() const override { return model_; }
  std::size_t size() const { return responses_.size(); }

 private:
  std::map<std::tuple<std::string, std::string, int>, std::string> responses_;
  std::string model_;
};

/// Questions the reward service can score: ingested questions plus any RL
/// split records.
std::map<std::string, corpus::QuestionRecord> load_questions(const PipelineConfig& config);

/// Runner registry named by the config, or the built-in one.
sandbox::RunnerRegistry load_registry(const PipelineConfig& config);

}  // namespace forge::pipeline
