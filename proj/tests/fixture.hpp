#pragma once

// A small end-to-end dataset. Questions q00..q19 ask for a + b + i; every
// one has a correct Python solution. Canned translations are correct for
// C++ everywhere and for Bash on q00..q13 only, so the mixtures cover 14
// questions and q14..q19 stay free for the held-out alignment set. Wrong
// programs carry a "wrong" comment so a scripted judge can stand in for the
// real sandbox.

#include <filesystem>
#include <string>
#include <vector>

#include "forge/jsonl.hpp"
#include "support.hpp"

namespace fixture {

namespace fs = std::filesystem;
using forge::json;

inline constexpr int kQuestions = 20;
inline constexpr int kBashCovered = 14;

inline std::string qid(int i) { return (i < 10 ? "q0" : "q") + std::to_string(i); }

inline std::string python(int i, bool ok = true) {
  return std::string("a, b = map(int, input().split())\n") + (ok ? "" : "# wrong\n") + "print(a " +
         (ok ? "+" : "-") + " b + " + std::to_string(i) + ")\n";
}

inline std::string cpp(int i, bool ok = true) {
  return std::string("#include <iostream>\n") + (ok ? "" : "// wrong\n") +
         "int main() { long long a, b; std::cin >> a >> b; std::cout << a " + (ok ? "+" : "-") + " b + " +
         std::to_string(i) + " << \"\\n\"; }\n";
}

inline std::string bash(int i, bool ok = true) {
  return std::string("read a b\n") + (ok ? "" : "# wrong\n") + "echo $((a " + (ok ? "+" : "-") + " b + " +
         std::to_string(i) + "))\n";
}

inline json question_json(const std::string& id, int i, const std::string& source, bool checker,
                          const std::string& split = "") {
  json tests = json::array();
  for (auto [a, b] : {std::pair{1, 2}, std::pair{10, 20}}) {
    tests.push_back({{"stdin", std::to_string(a) + " " + std::to_string(b) + "\n"},
                     {"expected_stdout", std::to_string(a + b + i) + "\n"}});
  }
  json j = {{"question_id", id},
            {"source_dataset", source},
            {"statement", "Read a and b and print a + b + " + std::to_string(i) + "."},
            {"tests", tests},
            {"has_visual_input", false},
            {"has_custom_checker", checker},
            {"uses_stdin_stdout", true},
            {"solutions", json::array({{{"language", "python"}, {"code", python(i)}}})}};
  if (!split.empty()) j["split"] = split;
  return j;
}

inline std::string fenced(const std::string& tag, const std::string& code) {
  return "Here is the translation.\n```" + tag + "\n" + code + "```\n";
}

/// Writes the inputs and config.json into `dir`; returns the config path.
inline fs::path write(const fs::path& dir, const std::string& work_dir = "work") {
  using testing::write_text;
  std::string dataset;
  for (int i = 0; i < kQuestions; ++i) dataset += question_json(qid(i), i, "fixture", false).dump() + "\n";
  dataset += question_json("q20", 20, "fixture", true).dump() + "\n";          // custom checker
  dataset += question_json("q21", 21, "reserved-bench", false).dump() + "\n";  // held-out benchmark
  dataset += "{\"question_id\": \"broken\"\n";
  write_text(dir / "dataset.jsonl", dataset);

  std::string rl;
  for (int i = 0; i < 10; ++i) {
    rl += question_json("rl" + std::to_string(i), i, "codeforces", i == 9, i < 7 ? "train" : "test").dump() + "\n";
  }
  write_text(dir / "rl.jsonl", rl);

  std::string replay;
  auto canned = [&](int i, const std::string& lang, int k, const std::string& text) {
    replay += json{{"source_solution_id", qid(i) + ":python:0"},
                   {"target_language", lang},
                   {"sample_index", k},
                   {"text", text}}
                  .dump() +
              "\n";
  };
  for (int i = 0; i < kQuestions; ++i) {
    canned(i, "cpp", 0, fenced("cpp", cpp(i)));
    // sample 1 repeats sample 0 (a duplicate) or is wrong
    canned(i, "cpp", 1, fenced("cpp", cpp(i, i % 4 != 0)));
    canned(i, "bash", 0, fenced("bash", bash(i, i < kBashCovered)));
    if (i % 5 == 0) canned(i, "bash", 1, "I cannot translate this.");
    else canned(i, "bash", 1, fenced("bash", bash(i, false) + "# second attempt\n"));
  }
  write_text(dir / "replay.jsonl", replay);

  std::string general;
  for (int i = 0; i < 5; ++i) general += json{{"messages", {{{"role", "user"}, {"content", i}}}}}.dump() + "\n";
  write_text(dir / "general.jsonl", general);

  std::string codegen;
  for (int i = 0; i < 4; ++i) {
    for (int k = 0; k < 2; ++k) {
      bool ok = (i + k) % 3 != 0;
      codegen += json{{"question_id", qid(i)},
                      {"language", "python"},
                      {"sample_index", k},
                      {"response_text", fenced("python", python(i, ok))}}
                     .dump() +
                 "\n";
    }
  }
  write_text(dir / "codegen.jsonl", codegen);

  std::string validation;
  const char* answers[] = {"The program is correct. True", "False", "I think it is false", "true", "unsure"};
  for (const char* lang : {"python", "cpp"}) {
    for (int i = 0; i < 10; ++i) {
      validation += json{{"id", std::string(lang) + "-" + std::to_string(i)},
                         {"question_id", qid(i)},
                         {"language", lang},
                         {"candidate_code", std::string(lang) == "cpp" ? cpp(i, i % 3 != 0) : python(i, i % 3 != 0)},
                         {"label", i % 3 != 0},
                         {"response_text", answers[i % 5]}}
                        .dump() +
                    "\n";
    }
  }
  write_text(dir / "validation.jsonl", validation);

  json config = {
      {"work_dir", work_dir},
      {"seeds", {{"ingest", 1}, {"translate", 2}, {"verify", 3}, {"mix", 4}, {"evaluate", 5}, {"align", 6}}},
      {"ingest",
       {{"dataset", "dataset.jsonl"}, {"reserved_sources", {"reserved-bench"}}, {"rl_dataset", "rl.jsonl"}}},
      {"translate",
       {{"client", "replay"},
        {"replay", "replay.jsonl"},
        {"model", "canned-model"},
        {"target_languages", {"cpp", "bash"}},
        {"samples", 2}}},
      {"verify", {{"workers", 1}, {"wall_seconds", 5.0}, {"compile_seconds", 60.0}}},
      {"mix",
       {{"languages", {"python", "cpp", "bash"}},
        {"budget", 60},
        {"monolingual_language", "python"},
        {"oracle_language", "bash"},
        {"general", "general.jsonl"}}},
      {"evaluate", {{"codegen", "codegen.jsonl"}, {"validation", "validation.jsonl"}, {"resamples", 200}}},
      {"align", {{"languages", {"python", "cpp"}}, {"provider", "hashing"}, {"layers", 4}, {"hidden", 16}}},
  };
  write_text(dir / "config.json", config.dump(2) + "\n");
  return dir / "config.json";
}

/// Stand-in judge for the fixture: anything marked wrong fails test 0.
inline testing::ScriptedJudge::Rule marked_wrong() {
  return [](const std::string& code, const std::string&) {
    return code.find("wrong") != std::string::npos ? testing::verdict(forge::sandbox::VerdictClass::WrongAnswer, 0)
                                                   : testing::verdict(forge::sandbox::VerdictClass::Accepted);
  };
}

}  // namespace fixture
