#pragma once

#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/sandbox.hpp"

namespace testing {

namespace fs = std::filesystem;

inline fs::path source_dir() { return fs::path(FORGE_SOURCE_DIR); }

/// The command-line tool under test; FORGE_EXE overrides the built one.
inline std::string forge_exe() {
  const char* env = std::getenv("FORGE_EXE");
  return env ? env : FORGE_EXE_PATH;
}

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "forge-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline forge::corpus::QuestionRecord question(const std::string& id, std::vector<forge::corpus::TestCase> tests = {},
                                              const std::string& source = "fixture") {
  forge::corpus::QuestionRecord q;
  q.question_id = id;
  q.source_dataset = source;
  q.statement = "Statement of " + id;
  q.tests = tests.empty() ? std::vector<forge::corpus::TestCase>{{"1\n", "1\n", false}} : std::move(tests);
  return q;
}

inline forge::corpus::SolutionRecord passed(const std::string& qid, const std::string& lang, const std::string& code,
                                            std::size_t n = 0) {
  forge::corpus::SolutionRecord s;
  s.solution_id = forge::corpus::human_solution_id(qid, lang, n);
  s.question_id = qid;
  s.language = lang;
  s.code = code;
  s.verification = forge::corpus::Passed{};
  return s;
}

/// Judge whose verdict is a function of the code text, for tests that must
/// not depend on installed toolchains.
class ScriptedJudge : public forge::sandbox::Judge {
 public:
  using Rule = std::function<forge::sandbox::Verdict(const std::string& code, const std::string& language)>;
  explicit ScriptedJudge(Rule rule) : rule_(std::move(rule)) {}

  forge::sandbox::Verdict judge(const std::string& code, const std::string& language,
                                std::span<const forge::corpus::TestCase> tests, const forge::sandbox::ResourceLimits&,
                                const forge::sandbox::JudgeOptions&) override {
    ++calls;
    auto v = rule_(code, language);
    v.per_test.resize(tests.size());
    return v;
  }

  std::atomic<int> calls{0};

 private:
  Rule rule_;
};

inline forge::sandbox::Verdict verdict(forge::sandbox::VerdictClass c, std::optional<std::size_t> failing = {}) {
  forge::sandbox::Verdict v;
  v.overall = c;
  v.failing_test = failing;
  return v;
}

/// Judge that accepts code containing "OK" and rejects everything else.
inline ScriptedJudge::Rule accept_marked() {
  return [](const std::string& code, const std::string&) {
    return code.find("OK") != std::string::npos ? verdict(forge::sandbox::VerdictClass::Accepted)
                                                 : verdict(forge::sandbox::VerdictClass::WrongAnswer, 0);
  };
}

}  // namespace testing
