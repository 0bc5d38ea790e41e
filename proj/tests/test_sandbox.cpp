#include "doctest.h"
#include "support.hpp"

#include "forge/error.hpp"
#include "forge/jsonl.hpp"
#include "forge/sandbox.hpp"

using namespace forge;
using namespace forge::sandbox;
using corpus::TestCase;

namespace {

ResourceLimits quick() {
  ResourceLimits l;
  l.wall_per_test = std::chrono::duration<double>(1.0);
  l.compile_timeout = std::chrono::duration<double>(60.0);
  return l;
}

Sandbox& shared_sandbox() {
  static Sandbox box(RunnerRegistry::builtin());
  return box;
}

const std::vector<TestCase> kDouble = {{"1\n", "2\n", false}, {"5\n", "10\n", false}, {"7\n", "14\n", false}};

}  // namespace

TEST_CASE("output comparison policy") {
  CHECK(compare_output("1 2  \r\n3\r\n\r\n\n", "1 2\n3\n"));
  CHECK(compare_output("x", "x\n"));
  CHECK_FALSE(compare_output("1.0\n", "1\n"));
  CHECK_FALSE(compare_output("a b\n", "a  b\n"));
  CHECK_FALSE(compare_output("\nx\n", "x\n"));  // leading blank lines matter
  CHECK(compare_output("", ""));
  CHECK_FALSE(compare_output("x \n", "x\n", ComparePolicy::Exact));
  CHECK(compare_output("x\n", "x\n", ComparePolicy::Exact));
}

TEST_CASE("runner specs are validated") {
  auto reg = [](const std::string& text) { return RunnerRegistry::from_json(json::parse(text)); };
  CHECK_THROWS_AS(reg(R"({"runners":[{"language":"python","source_file":"a.py","run":["python3","x.py"]}]})"),
                  ValidationError);  // run never references the program
  CHECK_THROWS_AS(reg(R"({"runners":[{"language":"x","source_file":"a","run":["definitely-not-a-tool-xyz","{src}"]}]})"),
                  ValidationError);
  auto skipped = RunnerRegistry::from_json(
      json::parse(R"({"runners":[{"language":"x","source_file":"a","run":["definitely-not-a-tool-xyz","{src}"]},)"
                  R"({"language":"bash","source_file":"m.sh","run":["bash","{src}"]}]})"),
      {true});
  CHECK(skipped.find("x") == nullptr);
  CHECK(skipped.find("bash") != nullptr);
  CHECK(skipped.skipped().count("x") == 1);
  CHECK_THROWS_AS(reg(R"({"runners":[)"
                      R"({"language":"bash","source_file":"m.sh","run":["bash","{src}"]},)"
                      R"({"language":"bash","source_file":"m.sh","run":["bash","{src}"]}]})"),
                  ValidationError);
}

TEST_CASE("builtin registry probes installed toolchains") {
  auto reg = RunnerRegistry::builtin();
  for (const char* lang : {"python", "cpp", "bash"}) {
    CAPTURE(lang);
    CHECK(reg.find(lang) != nullptr);
  }
  for (const auto& [lang, why] : reg.skipped()) {
    CAPTURE(lang);
    CHECK(reg.find(lang) == nullptr);
    CHECK_FALSE(why.empty());
  }
}

TEST_CASE("verdicts in python") {
  auto& box = shared_sandbox();
  auto limits = quick();
  CHECK(box.judge("print(int(input()) * 2)", "python", kDouble, limits).overall == VerdictClass::Accepted);

  auto wa = box.judge("n = int(input())\nprint(2 * n if n < 5 else n)", "python", kDouble, limits);
  CHECK(wa.overall == VerdictClass::WrongAnswer);
  CHECK(wa.failing_test == 1);
  CHECK(wa.per_test[1].actual_stdout == "5\n");
  CHECK_FALSE(wa.per_test[2].ran);  // short circuit by default

  JudgeOptions all;
  all.short_circuit = false;
  auto full = box.judge("n = int(input())\nprint(2 * n if n < 5 else n)", "python", kDouble, limits, all);
  CHECK(full.failing_test == 1);
  CHECK(full.per_test[2].ran);

  auto tle = box.judge("while True: pass", "python", kDouble, limits);
  CHECK(tle.overall == VerdictClass::TimeLimit);
  CHECK(tle.failing_test == 0);

  auto re = box.judge("raise SystemExit(3)", "python", kDouble, limits);
  CHECK(re.overall == VerdictClass::RuntimeError);
  CHECK(re.exit_info.find("3") != std::string::npos);

  auto syntax = box.judge("def (:", "python", kDouble, limits);
  CHECK(syntax.overall == VerdictClass::RuntimeError);

  ResourceLimits small = limits;
  small.output_bytes = 1 << 16;
  auto ol = box.judge("import sys\nwhile True: sys.stdout.write('x' * 4096)", "python", kDouble, small);
  CHECK(ol.overall == VerdictClass::OutputLimit);

  CHECK(box.judge("import sys; sys.stdout.write(str(2 * int(input())) + ' \\r\\n\\n')", "python", kDouble, limits)
            .overall == VerdictClass::Accepted);
  CHECK_THROWS_AS(box.judge("x", "python", std::vector<TestCase>{}, limits), ValidationError);
  CHECK_THROWS_AS(box.judge("x", "klingon", kDouble, limits), ValidationError);
}

TEST_CASE("verdicts in c++") {
  auto& box = shared_sandbox();
  auto limits = quick();
  CHECK(box.judge("#include <cstdio>\nint main(){long n;scanf(\"%ld\",&n);printf(\"%ld\\n\",2*n);}", "cpp", kDouble,
                  limits)
            .overall == VerdictClass::Accepted);
  auto ce = box.judge("int main() { return undefined_symbol; }", "cpp", kDouble, limits);
  CHECK(ce.overall == VerdictClass::CompileError);
  CHECK_FALSE(ce.failing_test.has_value());
  CHECK(ce.compile_log.find("undefined_symbol") != std::string::npos);
  CHECK(box.judge("int main(){ volatile int x = 0; for(;;) x++; }", "cpp", kDouble, limits).overall ==
        VerdictClass::TimeLimit);
  auto seg = box.judge("int main(){ volatile int* p = nullptr; *p = 1; }", "cpp", kDouble, limits);
  CHECK(seg.overall == VerdictClass::RuntimeError);
  CHECK(seg.exit_info.find("signal") != std::string::npos);
}

TEST_CASE("verdicts in bash") {
  auto& box = shared_sandbox();
  auto limits = quick();
  CHECK(box.judge("read n; echo $((n * 2))", "bash", kDouble, limits).overall == VerdictClass::Accepted);
  auto wa = box.judge("read n; if [ $n -eq 7 ]; then echo 13; else echo $((n*2)); fi", "bash", kDouble, limits);
  CHECK(wa.overall == VerdictClass::WrongAnswer);
  CHECK(wa.failing_test == 2);
  CHECK(box.judge("while :; do :; done", "bash", kDouble, limits).overall == VerdictClass::TimeLimit);
  // a background child that outlives the program is killed with its group
  CHECK(box.judge("(sleep 30 &) ; read n; echo $((n * 2))", "bash", kDouble, limits).overall ==
        VerdictClass::Accepted);
}

TEST_CASE("memory limit turns runaway allocation into a runtime error") {
  auto& box = shared_sandbox();
  auto limits = quick();
  limits.memory_bytes = 64u << 20;
  auto v = box.judge("x = bytearray(512 * 1024 * 1024)\nprint(2)", "python", kDouble, limits);
  CHECK(v.overall == VerdictClass::RuntimeError);
}

TEST_CASE("isolation blocks writes outside the workspace and network access") {
  auto& box = shared_sandbox();
  auto limits = quick();
  testing::TempDir outside;
  auto target = outside / "escaped.txt";
  const std::vector<TestCase> two = {{"1\n", "2\n", false}};
  std::string write_out = "open(r'" + target.string() + "', 'w').write('x')\nprint(2)";
  auto v = box.judge(write_out, "python", two, limits);
  if (box.filesystem_confined()) {
    CHECK(v.overall == VerdictClass::RuntimeError);
    CHECK_FALSE(std::filesystem::exists(target));
  } else {
    MESSAGE("Landlock unavailable; filesystem confinement not enforced");
  }
  // writing inside the workspace is fine
  CHECK(box.judge("open('scratch.txt', 'w').write('x')\nprint(2)", "python", two, limits)
            .overall == VerdictClass::Accepted);

  std::string connect =
      "import socket\n"
      "s = socket.socket()\n"
      "s.settimeout(2)\n"
      "try:\n"
      "    s.connect(('1.1.1.1', 80))\n"
      "    print('connected')\n"
      "except OSError:\n"
      "    print('blocked')\n";
  auto net = box.run_program(connect, "python", "", limits);
  if (box.network_isolated()) {
    CHECK(net.stdout_text == "blocked\n");
  } else {
    MESSAGE("network namespaces unavailable; network isolation not enforced");
  }
}

TEST_CASE("verdicts are deterministic across repeated runs") {
  auto& box = shared_sandbox();
  auto limits = quick();
  std::vector<std::string> programs = {"print(int(input()) * 2)", "print(1)", "while True: pass", "raise ValueError"};
  std::vector<VerdictClass> first;
  for (const auto& p : programs) first.push_back(box.judge(p, "python", kDouble, limits).overall);
  for (int rep = 0; rep < 2; ++rep) {
    for (size_t i = 0; i < programs.size(); ++i) {
      auto v = box.judge(programs[i], "python", kDouble, limits);
      CHECK(v.overall == first[i]);
    }
  }
}

TEST_CASE("verify_and_filter keeps the accepted subset") {
  std::map<std::string, corpus::QuestionRecord> questions;
  for (const char* id : {"q1", "q2"}) questions[id] = testing::question(id);

  std::vector<corpus::SolutionRecord> cands;
  auto add = [&](const std::string& qid, const std::string& lang, const std::string& code, bool synthetic) {
    corpus::SolutionRecord s;
    s.solution_id = qid + ":" + lang + ":" + std::to_string(cands.size());
    s.question_id = qid;
    s.language = lang;
    s.code = code;
    if (synthetic) s.origin = corpus::TranslationOrigin{"m", "src", 0};
    cands.push_back(s);
  };
  add("q1", "python", "OK a", false);
  add("q1", "python", "bad", false);
  add("q1", "cpp", "OK b", true);
  add("q1", "cpp", "OK b  ", true);  // same program after normalization
  add("q2", "cpp", "nope", true);
  add("q3", "cpp", "OK", true);  // unknown question

  testing::ScriptedJudge judge(testing::accept_marked());
  auto r = verify_and_filter(cands, questions, judge, {}, {2, {}});
  CHECK(judge.calls == 4);
  CHECK(r.corpus.total_instances() == 2);
  CHECK(r.corpus.question_count() == 2);
  CHECK(r.corpus.cell("q1", "cpp").size() == 1);
  CHECK(r.corpus.cell("q1", "cpp")[0].is_passed());
  CHECK(r.duplicates == 1);
  CHECK(r.human.judged == 2);
  CHECK(r.human.accepted == 1);
  CHECK(r.synthetic.judged == 3);
  CHECK(r.synthetic.accepted == 2);
  REQUIRE(r.rejections.size() == 3);
  CHECK(r.rejections[0].candidate_id == cands[1].solution_id);
  CHECK(r.rejections[0].verdict_class == "wrong-answer");
  CHECK(r.rejections[0].first_failing_test == 0);
  CHECK(r.rejections[2].verdict_class == "missing-question");
  auto j = to_json(r.rejections[2]);
  CHECK(j["first_failing_test"].is_null());
  CHECK(j["question_id"] == "q3");
}

TEST_CASE("acceptance rate formatting") {
  CHECK(format_rate({1000, 573}) == "57.3%");
  CHECK(AcceptanceCount{1000, 573}.rate() == doctest::Approx(0.573));
  CHECK(format_rate({3, 2}) == "66.7%");
  CHECK(format_rate({0, 0}) == "0.0%");
}

TEST_CASE("worker pool runs every job") {
  std::atomic<int> sum{0};
  std::vector<std::future<int>> futures;
  {
    WorkerPool pool(3);
    for (int i = 1; i <= 100; ++i) futures.push_back(pool.submit([i, &sum] {
      sum += i;
      return i * i;
    }));
  }
  CHECK(sum == 5050);
  CHECK(futures[9].get() == 100);
}
