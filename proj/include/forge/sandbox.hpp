#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "forge/corpus.hpp"

namespace forge::sandbox {

/// How to build and run programs of one language. Commands are argument
/// vectors, never shell strings; {src}, {bin} and {dir} expand to the source
/// file, the build artifact and the workspace directory.
struct RunnerSpec {
  std::string language;
  std::string source_file;
  std::vector<std::string> compile;  // empty for interpreted languages
  std::vector<std::string> run;
  std::map<std::string, std::string> env;
  /// Apply the memory ceiling as RLIMIT_AS. Runtimes that reserve large
  /// virtual ranges up front (JVM, V8, Go) need this off.
  bool limit_address_space = true;
};

/// Throws ValidationError when the runner description is unusable.
void validate(const RunnerSpec& spec);

struct ResourceLimits {
  std::chrono::duration<double> wall_per_test{10.0};
  std::size_t memory_bytes = 256u << 20;
  std::size_t output_bytes = 16u << 20;
  std::chrono::duration<double> compile_timeout{60.0};
};

void validate(const ResourceLimits& limits);

/// Immutable after load; safe to share across judging threads.
class RunnerRegistry {
 public:
  struct LoadOptions {
    /// Drop runners whose toolchain is not on PATH instead of failing.
    bool skip_unavailable = false;
  };

  RunnerRegistry() = default;

  /// Reads {"runners": [...]}. Each runner's toolchain is probed; a missing
  /// executable is a ValidationError unless skip_unavailable is set.
  static RunnerRegistry from_json(const json& config, LoadOptions options);
  static RunnerRegistry from_json(const json& config) { return from_json(config, LoadOptions{}); }
  static RunnerRegistry load(const std::filesystem::path& path, LoadOptions options);
  static RunnerRegistry load(const std::filesystem::path& path) { return load(path, LoadOptions{}); }
  /// The built-in registry with unavailable toolchains skipped.
  static RunnerRegistry builtin();

  const RunnerSpec* find(const std::string& language) const;
  std::vector<std::string> languages() const;
  /// Languages dropped at load time, with the missing executable.
  const std::map<std::string, std::string>& skipped() const { return skipped_; }

 private:
  std::map<std::string, RunnerSpec> runners_;
  std::map<std::string, std::string> skipped_;
};

/// Absolute path of an executable, searching PATH for bare names.
std::optional<std::filesystem::path> resolve_executable(const std::string& name);

enum class Isolation {
  None,
  /// Private network namespace plus Landlock confinement of filesystem writes
  /// to the workspace. Each part is used when the kernel allows it.
  Process,
};

struct SandboxOptions {
  Isolation isolation = Isolation::Process;
  /// Optional argv prefix that runs every command inside a container, e.g.
  /// {"docker", "run", "--rm", "-i", ...}. Empty runs on the host.
  std::vector<std::string> container_prefix;
  std::filesystem::path workspace_root;  // default: <tmp>/forge-sandbox
  std::size_t stderr_bytes = 64u << 10;
};

enum class ComparePolicy {
  /// Lines compared after CRLF folding, trailing whitespace per line
  /// stripped and trailing blank lines dropped.
  Normalized,
  Exact,
};

bool compare_output(std::string_view actual, std::string_view expected,
                    ComparePolicy policy = ComparePolicy::Normalized);

enum class VerdictClass { Accepted, WrongAnswer, CompileError, RuntimeError, TimeLimit, OutputLimit };

std::string_view to_string(VerdictClass v);

struct RunResult {
  enum class Status { Ok, CompileError, RuntimeError, TimeLimit, OutputLimit };
  Status status = Status::Ok;
  std::string stdout_text;
  std::string stderr_text;
  int exit_code = 0;
  int term_signal = 0;
  std::chrono::duration<double> duration{0};
  std::string compile_log;
};

struct TestOutcome {
  bool ran = false;
  bool passed = false;
  VerdictClass status = VerdictClass::Accepted;
  std::string actual_stdout;  // truncated to the output ceiling
  std::chrono::duration<double> duration{0};
  std::string exit_info;
};

struct Verdict {
  VerdictClass overall = VerdictClass::Accepted;
  /// Smallest index whose test did not pass; empty when accepted or when the
  /// program never compiled.
  std::optional<std::size_t> failing_test;
  std::string compile_log;
  std::string exit_info;
  std::vector<TestOutcome> per_test;

  bool accepted() const { return overall == VerdictClass::Accepted; }
};

struct JudgeOptions {
  bool short_circuit = true;
  ComparePolicy policy = ComparePolicy::Normalized;
};

/// Anything that can decide a program against a test suite.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual Verdict judge(const std::string& code, const std::string& language,
                        std::span<const corpus::TestCase> tests, const ResourceLimits& limits,
                        const JudgeOptions& options) = 0;
};

/// Runs programs under limits in throwaway workspaces.
class Sandbox : public Judge {
 public:
  explicit Sandbox(RunnerRegistry registry, SandboxOptions options = {});
  ~Sandbox() override;
  Sandbox(const Sandbox&) = delete;
  Sandbox& operator=(const Sandbox&) = delete;

  /// Compiles if needed and runs once with the given stdin.
  RunResult run_program(const std::string& code, const std::string& language,
                        const std::string& stdin_text, const ResourceLimits& limits);

  /// Every test is run unless options.short_circuit. Throws ValidationError
  /// for an empty test list or an unregistered language.
  Verdict judge(const std::string& code, const std::string& language,
                std::span<const corpus::TestCase> tests, const ResourceLimits& limits,
                const JudgeOptions& options) override;
  using Judge::judge;
  Verdict judge(const std::string& code, const std::string& language,
                std::span<const corpus::TestCase> tests, const ResourceLimits& limits) {
    return judge(code, language, tests, limits, JudgeOptions{});
  }

  const RunnerRegistry& registry() const { return registry_; }
  bool network_isolated() const { return netns_available_; }
  bool filesystem_confined() const { return landlock_abi_ > 0; }

 private:
  class Workspace;
  struct Prepared;
  Prepared prepare(const std::string& code, const std::string& language, const ResourceLimits& limits);
  RunResult execute(const Prepared& prepared, const std::string& stdin_text, const ResourceLimits& limits);

  RunnerRegistry registry_;
  SandboxOptions options_;
  bool netns_available_ = false;
  int landlock_abi_ = 0;
};

/// Bounded pool of worker threads. submit() may be called from any thread.
class WorkerPool {
 public:
  explicit WorkerPool(unsigned workers);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  template <typename F>
  auto submit(F&& fn) -> std::future<std::invoke_result_t<F>> {
    using R = std::invoke_result_t<F>;
    auto task = std::make_shared<std::packaged_task<R()>>(std::forward<F>(fn));
    auto fut = task->get_future();
    enqueue([task] { (*task)(); });
    return fut;
  }

  unsigned size() const { return static_cast<unsigned>(threads_.size()); }

 private:
  void enqueue(std::function<void()> job);

  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> queue_;
  bool stopping_ = false;
  std::vector<std::jthread> threads_;
};

struct Rejection {
  std::string candidate_id;
  std::string question_id;
  std::string language;
  /// A VerdictClass name, or "missing-question".
  std::string verdict_class;
  std::optional<std::size_t> first_failing_test;
};

json to_json(const Rejection& r);

struct AcceptanceCount {
  std::size_t judged = 0;
  std::size_t accepted = 0;

  double rate() const { return judged ? static_cast<double>(accepted) / static_cast<double>(judged) : 0.0; }
};

/// "57.3%" style rendering with one decimal.
std::string format_rate(const AcceptanceCount& count);

struct VerifyOptions {
  unsigned workers = 1;
  JudgeOptions judge;
};

struct VerifyResult {
  corpus::ParallelCorpus corpus;
  std::vector<Rejection> rejections;
  AcceptanceCount human;      // re-judged original solutions
  AcceptanceCount synthetic;  // translations
  /// Accepted candidates that duplicated a program already in their cell.
  std::size_t duplicates = 0;
};

/// Judges every candidate against its question's tests and keeps the accepted
/// ones (marked passed) in a corpus. Identical programs in the same cell are
/// judged once. Every kept question is registered in the corpus even when
/// none of its candidates pass.
VerifyResult verify_and_filter(std::span<const corpus::SolutionRecord> candidates,
                               const std::map<std::string, corpus::QuestionRecord>& questions,
                               Judge& judge, const ResourceLimits& limits,
                               const VerifyOptions& options = {});

}  // namespace forge::sandbox
