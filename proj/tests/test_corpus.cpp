#include <cmath>

#include "doctest.h"
#include "support.hpp"

#include "forge/error.hpp"
#include "forge/hash.hpp"
#include "forge/jsonl.hpp"

using namespace forge;
using namespace forge::corpus;

namespace {

std::string question_line(const std::string& id, const std::string& extra = "",
                          const std::string& solutions = R"x([{"language":"python","code":"print(1)"}])x") {
  return R"({"question_id":")" + id +
         R"(","source_dataset":"fixture","statement":"s","tests":[{"stdin":"","expected_stdout":"1\n"}],)"
         R"("has_visual_input":false,"has_custom_checker":false,"uses_stdin_stdout":true)" +
         extra + R"(,"solutions":)" + solutions + "}";
}

}  // namespace

TEST_CASE("ids follow the documented formats") {
  CHECK(human_solution_id("q1", "cpp", 2) == "q1:cpp:2");
  CHECK(translation_solution_id("q1:python:0", "go", 7) == "q1:python:0>go#7");
}

TEST_CASE("code hash ignores trailing whitespace and CRLF only") {
  CHECK(code_hash("a = 1  \r\nb = 2\n") == code_hash("a = 1\nb = 2\n"));
  CHECK(code_hash("a = 1\n") != code_hash("a  = 1\n"));
  // sha256("abc"), a published test vector
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("question and solution records round-trip through JSON") {
  QuestionRecord q = testing::question("q7", {{"3\n", "6\n", false}, {"", "", true}});
  q.split = "train";
  q.has_custom_checker = true;
  CHECK(to_json(question_from_json(to_json(q))) == to_json(q));

  SolutionRecord s;
  s.solution_id = "q7:python:0>go#3";
  s.question_id = "q7";
  s.language = "go";
  s.code = "package main";
  s.origin = TranslationOrigin{"m", "q7:python:0", 3};
  s.verification = Failed{"wrong-answer"};
  auto back = solution_from_json(to_json(s));
  CHECK(to_json(back) == to_json(s));
  CHECK(back.is_synthetic());
  CHECK(std::get<TranslationOrigin>(back.origin).sample_index == 3);
}

TEST_CASE("empty expected output needs an explicit flag") {
  json j = to_json(testing::question("q"));
  j["tests"][0]["expected_stdout"] = "";
  CHECK_THROWS_AS(question_from_json(j), ValidationError);
  j["tests"][0]["allow_empty_output"] = true;
  CHECK_NOTHROW(question_from_json(j));
}

TEST_CASE("ingestion reports malformed lines and keeps streaming") {
  testing::TempDir dir;
  auto path = dir / "in.jsonl";
  testing::write_text(path, question_line("a") + "\n" + "{not json\n" + "\n" +
                                R"({"question_id":"b"})" + "\n" +
                                question_line("c", "", R"([{"language":"cpp","code":"x"},{"language":"cpp","code":"y","solution_id":"mine"}])") +
                                "\r\n");
  auto r = ingest_dataset(path);
  REQUIRE(r.items.size() == 2);
  REQUIRE(r.errors.size() == 2);
  CHECK(r.errors[0].line == 2);
  CHECK(r.errors[1].line == 4);
  CHECK(r.errors[1].message.find("source_dataset") != std::string::npos);
  CHECK(r.items[0].line == 1);
  CHECK(r.items[0].solutions[0].solution_id == "a:python:0");
  CHECK(r.items[1].line == 5);
  CHECK(r.items[1].solutions[0].solution_id == "c:cpp:0");
  CHECK(r.items[1].solutions[1].solution_id == "mine");
  CHECK_THROWS_AS(ingest_dataset(path, "other-format"), ValidationError);
  CHECK_THROWS_AS(ingest_dataset(dir / "missing.jsonl"), IoError);
}

TEST_CASE("filtering applies drop reasons in a fixed order") {
  auto q = [](const std::string& id) { return testing::question(id); };
  std::vector<QuestionRecord> in;
  in.push_back(q("keep"));
  auto reserved = q("reserved");
  reserved.source_dataset = "codeforces";
  reserved.has_visual_input = true;  // the earlier reason wins
  in.push_back(reserved);
  auto visual = q("visual");
  visual.has_visual_input = true;
  visual.has_custom_checker = true;
  in.push_back(visual);
  auto checker = q("checker");
  checker.has_custom_checker = true;
  in.push_back(checker);
  auto interactive = q("interactive");
  interactive.uses_stdin_stdout = false;
  in.push_back(interactive);
  auto empty = q("empty");
  empty.tests.clear();
  in.push_back(empty);

  auto r = filter_questions(in, {{"codeforces"}, true});
  REQUIRE(r.kept.size() == 1);
  CHECK(r.kept[0].question_id == "keep");
  REQUIRE(r.dropped.size() == 5);
  CHECK(r.dropped[0].reason == DropReason::ReservedSource);
  CHECK(r.dropped[1].reason == DropReason::VisualInput);
  CHECK(r.dropped[2].reason == DropReason::CustomChecker);
  CHECK(r.dropped[3].reason == DropReason::NotStdinStdout);
  CHECK(r.dropped[4].reason == DropReason::NoTests);
  CHECK(to_string(DropReason::CustomChecker) == "custom-checker");

  auto relaxed = filter_questions(in, {{}, false});
  CHECK(relaxed.kept.size() == 3);  // keep, reserved, interactive
}

TEST_CASE("corpus deduplicates per cell and refuses unverified records") {
  ParallelCorpus c;
  CHECK(c.insert(testing::passed("q", "python", "print(1)\n")));
  CHECK_FALSE(c.insert(testing::passed("q", "python", "print(1)   \n", 1)));
  CHECK(c.insert(testing::passed("q", "cpp", "print(1)\n")));  // other cell
  auto raw = testing::passed("q", "go", "x");
  raw.verification = Unverified{};
  CHECK_THROWS_AS(c.insert(raw), ValidationError);
  c.add_question("empty");
  CHECK(c.question_count() == 2);
  CHECK(c.total_instances() == 2);
  CHECK(c.cell("q", "python").size() == 1);
  CHECK(c.cell("missing", "python").empty());
  CHECK(c.languages() == std::vector<std::string>{"cpp", "python"});
}

TEST_CASE("stats match a hand count") {
  ParallelCorpus c;
  c.insert(testing::passed("a", "python", "1"));
  c.insert(testing::passed("a", "python", "2", 1));
  c.insert(testing::passed("a", "cpp", "1"));
  c.insert(testing::passed("b", "python", "3"));
  c.add_question("z");
  auto s = corpus_stats(c, {"python", "cpp", "go"});
  CHECK(s.question_count == 3);
  CHECK(s.per_language.at("python") == 3);
  CHECK(s.per_language.at("cpp") == 1);
  CHECK(s.per_language.at("go") == 0);
  CHECK(s.total_instances == 4);
  CHECK(s.grid_cells == 9);
  CHECK(s.nonempty_cells == 3);
  CHECK(*s.mean_per_cell == doctest::Approx(4.0 / 9.0));
  CHECK(*s.mean_per_nonempty_cell == doctest::Approx(4.0 / 3.0));
  CHECK(*s.coverage == doctest::Approx(3.0 / 9.0));

  auto csv = stats_csv(s);
  CHECK(csv.rfind("metric,language,value\nquestions,,3\ninstances,python,3\n", 0) == 0);
  CHECK(csv.find("total_instances,,4\n") != std::string::npos);

  auto none = summarize_cells({}, {"python"});
  CHECK_FALSE(none.mean_per_cell.has_value());
  CHECK(stats_csv(none).find("mean_per_cell,,undefined") != std::string::npos);
}

TEST_CASE("full-scale corpus arithmetic") {
  // 3111 questions x 11 languages x 181 instances per cell is about 6.2M.
  std::vector<std::string> langs = {"python", "c", "cpp", "java", "csharp", "javascript",
                                    "bash", "lua", "go", "php", "ruby"};
  std::map<std::string, std::map<std::string, size_t>> cells;
  for (int q = 0; q < 3111; ++q) {
    auto& row = cells["q" + std::to_string(q)];
    for (const auto& l : langs) row[l] = 181;
  }
  auto s = summarize_cells(cells, langs);
  CHECK(s.question_count == 3111);
  CHECK(s.total_instances == 6194001);
  CHECK(std::llround(s.total_instances / 1e5) == 62);  // "6.2M"
  CHECK(*s.mean_per_cell == doctest::Approx(181.0));
  CHECK(*s.coverage == doctest::Approx(1.0));
}

TEST_CASE("atomic files appear only on commit") {
  testing::TempDir dir;
  auto target = dir / "out.jsonl";
  {
    AtomicFile f(target);
    f.write_line({{"b", 1}, {"a", 2}});
    CHECK_FALSE(std::filesystem::exists(target));
  }
  CHECK_FALSE(std::filesystem::exists(target));
  CHECK(std::distance(std::filesystem::directory_iterator(dir.path()), {}) == 0);
  {
    AtomicFile f(target);
    f.write_line({{"b", 1}, {"a", 2}});
    f.commit();
  }
  CHECK(testing::read_text(target) == "{\"a\":2,\"b\":1}\n");
}
