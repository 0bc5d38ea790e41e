#include "forge/sandbox.hpp"

#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "forge/assets.hpp"
#include "forge/error.hpp"
#include "forge/hash.hpp"
#include "process.hpp"

namespace forge::sandbox {

namespace {

bool is_placeholder_command(const std::string& arg) {
  return arg.find('{') != std::string::npos;
}

std::string expand(std::string s, const std::filesystem::path& dir, const std::filesystem::path& src,
                   const std::filesystem::path& bin) {
  const std::pair<std::string, std::string> subs[] = {
      {"{src}", src.string()}, {"{bin}", bin.string()}, {"{dir}", dir.string()}};
  for (const auto& [key, value] : subs) {
    for (size_t pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size())) {
      s.replace(pos, key.size(), value);
    }
  }
  return s;
}

std::vector<std::string> string_list(const json& j, const char* field) {
  std::vector<std::string> out;
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) return out;
  if (!it->is_array()) throw ValidationError(std::string("runner field '") + field + "' must be an array");
  for (const auto& v : *it) {
    if (!v.is_string()) throw ValidationError(std::string("runner field '") + field + "' must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

void validate(const RunnerSpec& spec) {
  if (spec.language.empty()) throw ValidationError("runner: empty language");
  if (spec.source_file.empty() || spec.source_file.find('/') != std::string::npos) {
    throw ValidationError("runner " + spec.language + ": source_file must be a bare file name");
  }
  if (spec.run.empty()) throw ValidationError("runner " + spec.language + ": empty run command");
  bool references_artifact = std::any_of(spec.run.begin(), spec.run.end(), [](const std::string& a) {
    return a.find("{src}") != std::string::npos || a.find("{bin}") != std::string::npos ||
           a.find("{dir}") != std::string::npos;
  });
  if (!references_artifact) {
    throw ValidationError("runner " + spec.language + ": run command does not reference the program");
  }
}

void validate(const ResourceLimits& limits) {
  if (limits.wall_per_test.count() <= 0 || limits.compile_timeout.count() <= 0 ||
      limits.memory_bytes == 0 || limits.output_bytes == 0) {
    throw ValidationError("resource limits must all be positive");
  }
}

std::optional<std::filesystem::path> resolve_executable(const std::string& name) {
  if (name.empty()) return std::nullopt;
  auto executable = [](const std::filesystem::path& p) {
    std::error_code ec;
    return std::filesystem::is_regular_file(p, ec) && ::access(p.c_str(), X_OK) == 0;
  };
  if (name.find('/') != std::string::npos) {
    if (executable(name)) return std::filesystem::absolute(name);
    return std::nullopt;
  }
  const char* path = std::getenv("PATH");
  std::string_view dirs = path ? path : "/usr/local/bin:/usr/bin:/bin";
  while (!dirs.empty()) {
    size_t colon = dirs.find(':');
    std::string_view dir = dirs.substr(0, colon);
    if (!dir.empty()) {
      std::filesystem::path candidate = std::filesystem::path(dir) / name;
      if (executable(candidate)) return candidate;
    }
    if (colon == std::string_view::npos) break;
    dirs.remove_prefix(colon + 1);
  }
  return std::nullopt;
}

// --- registry ------------------------------------------------------------------

RunnerRegistry RunnerRegistry::from_json(const json& config, LoadOptions options) {
  if (!config.is_object() || !config.contains("runners") || !config["runners"].is_array()) {
    throw ValidationError("runner registry: expected {\"runners\": [...]}");
  }
  RunnerRegistry reg;
  for (const json& r : config["runners"]) {
    RunnerSpec spec;
    if (!r.is_object()) throw ValidationError("runner registry: entries must be objects");
    spec.language = r.value("language", "");
    spec.source_file = r.value("source_file", "");
    spec.compile = string_list(r, "compile");
    spec.run = string_list(r, "run");
    if (auto it = r.find("env"); it != r.end()) {
      if (!it->is_object()) throw ValidationError("runner " + spec.language + ": env must be an object");
      for (auto& [k, v] : it->items()) spec.env[k] = v.get<std::string>();
    }
    spec.limit_address_space = r.value("limit_address_space", true);
    validate(spec);
    if (reg.runners_.count(spec.language)) {
      throw ValidationError("runner registry: duplicate language " + spec.language);
    }

    std::optional<std::string> missing;
    for (const auto* cmd : {&spec.compile, &spec.run}) {
      if (cmd->empty() || is_placeholder_command(cmd->front())) continue;
      if (!resolve_executable(cmd->front())) missing = cmd->front();
    }
    if (missing) {
      if (!options.skip_unavailable) {
        throw ValidationError("runner " + spec.language + ": toolchain '" + *missing + "' not found");
      }
      reg.skipped_[spec.language] = *missing;
      continue;
    }
    reg.runners_[spec.language] = std::move(spec);
  }
  return reg;
}

RunnerRegistry RunnerRegistry::load(const std::filesystem::path& path, LoadOptions options) {
  json config;
  try {
    config = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("runner registry " + path.string() + ": " + e.what());
  }
  return from_json(config, options);
}

RunnerRegistry RunnerRegistry::builtin() {
  return from_json(json::parse(assets::default_runners()), LoadOptions{.skip_unavailable = true});
}

const RunnerSpec* RunnerRegistry::find(const std::string& language) const {
  auto it = runners_.find(language);
  return it == runners_.end() ? nullptr : &it->second;
}

std::vector<std::string> RunnerRegistry::languages() const {
  std::vector<std::string> out;
  for (const auto& [lang, _] : runners_) out.push_back(lang);
  return out;
}

// --- comparison ----------------------------------------------------------------

namespace {

std::vector<std::string_view> normalized_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    size_t end = line.find_last_not_of(" \t\r\f\v");
    lines.push_back(end == std::string_view::npos ? std::string_view{} : line.substr(0, end + 1));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

}  // namespace

bool compare_output(std::string_view actual, std::string_view expected, ComparePolicy policy) {
  if (policy == ComparePolicy::Exact) return actual == expected;
  return normalized_lines(actual) == normalized_lines(expected);
}

std::string_view to_string(VerdictClass v) {
  switch (v) {
    case VerdictClass::Accepted: return "accepted";
    case VerdictClass::WrongAnswer: return "wrong-answer";
    case VerdictClass::CompileError: return "compile-error";
    case VerdictClass::RuntimeError: return "runtime-error";
    case VerdictClass::TimeLimit: return "time-limit";
    case VerdictClass::OutputLimit: return "output-limit";
  }
  return "unknown";
}

// --- sandbox -------------------------------------------------------------------

class Sandbox::Workspace {
 public:
  explicit Workspace(const std::filesystem::path& root) {
    std::filesystem::create_directories(root);
    std::string tmpl = (root / "job-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw IoError("cannot create workspace under " + root.string());
    path_ = tmpl;
  }
  ~Workspace() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct Sandbox::Prepared {
  std::unique_ptr<Workspace> workspace;
  const RunnerSpec* spec = nullptr;
  std::vector<std::string> run_argv;
  std::vector<std::string> env;
  bool compiled = true;
  std::string compile_log;
};

Sandbox::Sandbox(RunnerRegistry registry, SandboxOptions options)
    : registry_(std::move(registry)), options_(std::move(options)) {
  if (options_.workspace_root.empty()) {
    options_.workspace_root =
        std::filesystem::temp_directory_path() / ("forge-sandbox-" + std::to_string(::getpid()));
  }
  std::filesystem::create_directories(options_.workspace_root);
  if (options_.isolation == Isolation::Process && options_.container_prefix.empty()) {
    netns_available_ = detail::network_namespace_available();
    landlock_abi_ = detail::landlock_abi();
  }
}

Sandbox::~Sandbox() {
  std::error_code ec;
  std::filesystem::remove(options_.workspace_root, ec);  // only if empty
}

Sandbox::Prepared Sandbox::prepare(const std::string& code, const std::string& language,
                                   const ResourceLimits& limits) {
  validate(limits);
  const RunnerSpec* spec = registry_.find(language);
  if (!spec) throw ValidationError("no runner registered for language '" + language + "'");

  Prepared p;
  p.spec = spec;
  p.workspace = std::make_unique<Workspace>(options_.workspace_root);
  const auto& dir = p.workspace->path();
  const auto src = dir / spec->source_file;
  const auto bin = dir / "prog";
  {
    std::ofstream f(src, std::ios::binary);
    f << code;
    if (!f) throw IoError("cannot write " + src.string());
  }

  const char* path = std::getenv("PATH");
  p.env = {std::string("PATH=") + (path ? path : "/usr/local/bin:/usr/bin:/bin"),
           "HOME=" + dir.string(), "TMPDIR=" + dir.string(), "LANG=C.UTF-8", "LC_ALL=C.UTF-8"};
  for (const auto& [k, v] : spec->env) p.env.push_back(k + "=" + expand(v, dir, src, bin));

  auto build_argv = [&](const std::vector<std::string>& cmd) {
    std::vector<std::string> argv = options_.container_prefix;
    for (const auto& a : cmd) argv.push_back(expand(a, dir, src, bin));
    if (auto exe = resolve_executable(argv.front())) argv.front() = exe->string();
    return argv;
  };
  p.run_argv = build_argv(spec->run);

  if (!spec->compile.empty()) {
    detail::ProcessSpec ps;
    ps.argv = build_argv(spec->compile);
    ps.env = p.env;
    ps.cwd = dir;
    ps.timeout = limits.compile_timeout;
    ps.stdout_limit = 1u << 20;
    ps.merge_stderr = true;
    ps.isolate_network = netns_available_;
    ps.landlock_abi = landlock_abi_;
    ps.writable_dir = dir;
    auto r = detail::run_process(ps);
    if (!r.clean_exit()) {
      p.compiled = false;
      p.compile_log = r.out;
      if (!r.spawned) p.compile_log += r.spawn_error;
      if (r.timed_out) p.compile_log += "\n[compile timed out]";
    }
  }
  return p;
}

RunResult Sandbox::execute(const Prepared& p, const std::string& stdin_text, const ResourceLimits& limits) {
  detail::ProcessSpec ps;
  ps.argv = p.run_argv;
  ps.env = p.env;
  ps.cwd = p.workspace->path();
  ps.stdin_data = stdin_text;
  ps.timeout = limits.wall_per_test;
  ps.stdout_limit = limits.output_bytes;
  ps.stderr_limit = options_.stderr_bytes;
  if (p.spec->limit_address_space) ps.address_space = limits.memory_bytes;
  ps.isolate_network = netns_available_;
  ps.landlock_abi = landlock_abi_;
  ps.writable_dir = p.workspace->path();
  auto r = detail::run_process(ps);

  RunResult out;
  out.stdout_text = std::move(r.out);
  out.stderr_text = std::move(r.err);
  out.exit_code = r.exit_code;
  out.term_signal = r.term_signal;
  out.duration = r.duration;
  if (!r.spawned) {
    out.status = RunResult::Status::RuntimeError;
    out.stderr_text = r.spawn_error;
  } else if (r.timed_out) {
    out.status = RunResult::Status::TimeLimit;
  } else if (r.output_exceeded) {
    out.status = RunResult::Status::OutputLimit;
  } else if (r.term_signal != 0 || r.exit_code != 0) {
    out.status = RunResult::Status::RuntimeError;
  }
  return out;
}

RunResult Sandbox::run_program(const std::string& code, const std::string& language,
                               const std::string& stdin_text, const ResourceLimits& limits) {
  Prepared p = prepare(code, language, limits);
  if (!p.compiled) {
    RunResult r;
    r.status = RunResult::Status::CompileError;
    r.compile_log = p.compile_log;
    return r;
  }
  return execute(p, stdin_text, limits);
}

namespace {

std::string describe_exit(const RunResult& r) {
  if (r.term_signal) return "signal " + std::to_string(r.term_signal);
  std::string s = "exit " + std::to_string(r.exit_code);
  if (!r.stderr_text.empty()) s += ": " + r.stderr_text.substr(0, 512);
  return s;
}

}  // namespace

Verdict Sandbox::judge(const std::string& code, const std::string& language,
                       std::span<const corpus::TestCase> tests, const ResourceLimits& limits,
                       const JudgeOptions& options) {
  if (tests.empty()) throw ValidationError("judge: empty test suite");
  Verdict v;
  v.per_test.resize(tests.size());
  Prepared p = prepare(code, language, limits);
  if (!p.compiled) {
    v.overall = VerdictClass::CompileError;
    v.compile_log = std::move(p.compile_log);
    for (auto& t : v.per_test) t.status = VerdictClass::CompileError;
    return v;
  }
  for (size_t i = 0; i < tests.size(); ++i) {
    RunResult r = execute(p, tests[i].stdin_text, limits);
    TestOutcome& t = v.per_test[i];
    t.ran = true;
    t.duration = r.duration;
    switch (r.status) {
      case RunResult::Status::TimeLimit: t.status = VerdictClass::TimeLimit; break;
      case RunResult::Status::OutputLimit: t.status = VerdictClass::OutputLimit; break;
      case RunResult::Status::RuntimeError:
        t.status = VerdictClass::RuntimeError;
        t.exit_info = describe_exit(r);
        break;
      default:
        t.passed = compare_output(r.stdout_text, tests[i].expected_stdout, options.policy);
        t.status = t.passed ? VerdictClass::Accepted : VerdictClass::WrongAnswer;
    }
    t.actual_stdout = std::move(r.stdout_text);
    if (!t.passed && !v.failing_test) {
      v.failing_test = i;
      v.overall = t.status;
      v.exit_info = t.exit_info;
      if (options.short_circuit) break;
    }
  }
  return v;
}

// --- worker pool ---------------------------------------------------------------

WorkerPool::WorkerPool(unsigned workers) {
  workers = std::max(1u, workers);
  threads_.reserve(workers);
  for (unsigned i = 0; i < workers; ++i) {
    threads_.emplace_back([this] {
      for (;;) {
        std::function<void()> job;
        {
          std::unique_lock lock(mutex_);
          cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
          if (queue_.empty()) return;
          job = std::move(queue_.front());
          queue_.pop_front();
        }
        job();
      }
    });
  }
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
}

void WorkerPool::enqueue(std::function<void()> job) {
  {
    std::lock_guard lock(mutex_);
    if (stopping_) throw Error("worker pool is shutting down");
    queue_.push_back(std::move(job));
  }
  cv_.notify_one();
}

// --- verification ----------------------------------------------------------------

json to_json(const Rejection& r) {
  json j{{"candidate_id", r.candidate_id},
         {"question_id", r.question_id},
         {"language", r.language},
         {"verdict_class", r.verdict_class}};
  j["first_failing_test"] = r.first_failing_test ? json(*r.first_failing_test) : json(nullptr);
  return j;
}

std::string format_rate(const AcceptanceCount& count) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(1) << count.rate() * 100.0 << "%";
  return ss.str();
}

VerifyResult verify_and_filter(std::span<const corpus::SolutionRecord> candidates,
                               const std::map<std::string, corpus::QuestionRecord>& questions,
                               Judge& judge, const ResourceLimits& limits, const VerifyOptions& options) {
  VerifyResult result;
  for (const auto& [qid, _] : questions) result.corpus.add_question(qid);

  // One judging job per distinct (question, language, program).
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, size_t> job_of_key;
  std::vector<size_t> job_of_candidate(candidates.size(), SIZE_MAX);
  std::vector<size_t> job_candidate;  // representative candidate per job
  for (size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (!questions.count(c.question_id)) continue;
    Key key{c.question_id, c.language, code_hash(c.code)};
    auto [it, inserted] = job_of_key.emplace(std::move(key), job_candidate.size());
    if (inserted) job_candidate.push_back(i);
    job_of_candidate[i] = it->second;
  }

  std::vector<Verdict> verdicts(job_candidate.size());
  {
    WorkerPool pool(options.workers);
    std::vector<std::future<Verdict>> futures;
    futures.reserve(job_candidate.size());
    for (size_t idx : job_candidate) {
      const auto& c = candidates[idx];
      const auto& tests = questions.at(c.question_id).tests;
      futures.push_back(pool.submit([&judge, &c, &tests, &limits, &options] {
        return judge.judge(c.code, c.language, tests, limits, options.judge);
      }));
    }
    for (size_t j = 0; j < futures.size(); ++j) verdicts[j] = futures[j].get();
  }

  for (size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (job_of_candidate[i] == SIZE_MAX) {
      result.rejections.push_back({c.solution_id, c.question_id, c.language, "missing-question", std::nullopt});
      continue;
    }
    const Verdict& v = verdicts[job_of_candidate[i]];
    AcceptanceCount& bucket = c.is_synthetic() ? result.synthetic : result.human;
    ++bucket.judged;
    if (v.accepted()) {
      ++bucket.accepted;
      corpus::SolutionRecord kept = c;
      kept.verification = corpus::Passed{};
      if (!result.corpus.insert(std::move(kept))) ++result.duplicates;
    } else {
      result.rejections.push_back(
          {c.solution_id, c.question_id, c.language, std::string(to_string(v.overall)), v.failing_test});
    }
  }
  return result;
}

}  // namespace forge::sandbox
