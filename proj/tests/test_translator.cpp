#include <mutex>
#include <set>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "support.hpp"

#include "forge/error.hpp"
#include "forge/hash.hpp"
#include "forge/jsonl.hpp"
#include "forge/translator.hpp"

using namespace forge;
using namespace forge::translate;

namespace {

// Golden prompts were rendered by an independent single-pass substitution
// over the template text.
void check_golden(const std::string& name) {
  auto dir = testing::source_dir() / "tests" / "golden";
  auto fixture = json::parse(testing::read_text(dir / ("prompt_" + name + ".json")));
  LanguageDescriptor target{fixture["lg_long"].get<std::string>(), fixture["lg_short"].get<std::string>()};
  auto got = render_translation_prompt(fixture["code"].get<std::string>(),
                                       fixture["instruction"].get<std::string>(), target);
  CHECK(got == testing::read_text(dir / ("prompt_" + name + ".txt")));
}

corpus::SolutionRecord source() {
  corpus::SolutionRecord s;
  s.solution_id = "q1:python:0";
  s.question_id = "q1";
  s.language = "python";
  s.code = "print(int(input()) * 2)";
  return s;
}

TranslationJob job(int samples = 4) { return {source(), "Double the input.", language("cpp"), samples, {}}; }

class FakeClient : public CompletionClient {
 public:
  using Script = std::function<CompletionResult(const CompletionRequest&, int attempt)>;
  explicit FakeClient(Script s) : script_(std::move(s)) {}

  CompletionResult complete(const CompletionRequest& r) override {
    int attempt;
    {
      std::lock_guard lock(mu_);
      attempt = ++attempts_[r.sample_index];
      keys.insert(r.idempotency_key);
      ++calls;
      in_flight_now = ++in_flight;
      max_in_flight = std::max(max_in_flight, in_flight_now);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    auto res = script_(r, attempt);
    std::lock_guard lock(mu_);
    --in_flight;
    return res;
  }
  std::string model_id() const override { return "fake-model"; }

  int calls = 0;
  int in_flight = 0, in_flight_now = 0, max_in_flight = 0;
  std::set<std::string> keys;

 private:
  Script script_;
  std::mutex mu_;
  std::map<int, int> attempts_;
};

CompletionResult ok_text(const std::string& code) { return {200, "Here you go:\n```cpp\n" + code + "\n```\n", ""}; }

TranslateOptions fast() {
  TranslateOptions o;
  o.sleep = [](std::chrono::milliseconds) {};
  return o;
}

}  // namespace

TEST_CASE("translation prompt matches golden files") {
  for (const char* name : {"cpp", "go", "ruby", "lua"}) {
    CAPTURE(name);
    check_golden(name);
  }
}

TEST_CASE("translation prompt template is the embedded asset") {
  auto asset = testing::read_text(testing::source_dir() / "assets" / "translation_prompt.txt");
  CHECK(translation_prompt_template() == asset);
}

TEST_CASE("substitution is single pass") {
  auto out = render_translation_prompt("print('{instruction} {lg_short}')", "say {code}", language("go"));
  CHECK(out.find("print('{instruction} {lg_short}')") != std::string::npos);
  CHECK(out.find("say {code}") != std::string::npos);
  CHECK(out.find("{lg_long}") == std::string::npos);
  CHECK(out.find("```go\n```") != std::string::npos);
}

TEST_CASE("empty code or instruction is rejected") {
  CHECK_THROWS_AS(render_translation_prompt("", "x", language("go")), ValidationError);
  CHECK_THROWS_AS(render_translation_prompt("x", "", language("go")), ValidationError);
  CHECK_THROWS_AS(language("cobol"), ValidationError);
  CHECK_THROWS_AS(validate(LanguageDescriptor{"Obj C", "obj c"}), ValidationError);
}

TEST_CASE("builtin languages cover the eleven corpus languages") {
  std::vector<std::string> shorts;
  for (const auto& l : builtin_languages()) shorts.push_back(l.short_name);
  CHECK(shorts == std::vector<std::string>{"python", "c", "cpp", "java", "csharp", "javascript", "bash", "lua",
                                           "go", "php", "ruby"});
  CHECK(language("csharp").long_name == "C#");
  CHECK(language("cpp").long_name == "C++");
}

TEST_CASE("code extraction") {
  auto cpp = language("cpp");
  CHECK(extract_code_block("```cpp\nint a;\n```", cpp) == "int a;");
  // tagged beats untagged, last tagged wins
  CHECK(extract_code_block("```\nu\n```\n```cpp\nfirst\n```\n```C++\nsecond\n```\n```\nlast\n```", cpp) ==
        "second");
  // untagged fallback picks the last untagged block
  CHECK(extract_code_block("```\none\n```\ntext\n```\ntwo\n```", cpp) == "two");
  // other languages are ignored
  CHECK_FALSE(extract_code_block("```python\nx\n```", cpp).has_value());
  CHECK_FALSE(extract_code_block("no code here", cpp).has_value());
  // interior bytes including blank lines survive
  CHECK(extract_code_block("```cpp\na\n\n  b\n```", cpp) == "a\n\n  b");
  // an unterminated final block still counts
  CHECK(extract_code_block("```cpp\nint x;\n", cpp) == "int x;");
}

TEST_CASE("idempotency keys depend on prompt and sample index only") {
  CHECK(idempotency_key("p", 0) == idempotency_key("p", 0));
  CHECK(idempotency_key("p", 0) != idempotency_key("p", 1));
  CHECK(idempotency_key("p", 0) == sha256_hex("p\n#sample=0"));
}

TEST_CASE("samples produce records ordered by index with provenance") {
  FakeClient client([](const CompletionRequest& r, int) { return ok_text("// " + std::to_string(r.sample_index)); });
  auto res = translate_solution(job(5), client, fast());
  REQUIRE(res.records.size() == 5);
  REQUIRE(res.outcomes.size() == 5);
  for (int k = 0; k < 5; ++k) {
    const auto& r = res.records[static_cast<size_t>(k)];
    CHECK(r.solution_id == "q1:python:0>cpp#" + std::to_string(k));
    CHECK(r.code == "// " + std::to_string(k));
    CHECK(r.language == "cpp");
    const auto& origin = std::get<corpus::TranslationOrigin>(r.origin);
    CHECK(origin.model == "fake-model");
    CHECK(origin.source_solution_id == "q1:python:0");
    CHECK(origin.sample_index == k);
    CHECK(std::holds_alternative<corpus::Unverified>(r.verification));
  }
  CHECK(client.keys.size() == 5);
}

TEST_CASE("server errors retry with exponential backoff") {
  FakeClient client([](const CompletionRequest& r, int attempt) {
    if (r.sample_index == 1 && attempt <= 2) return CompletionResult{503, "", "busy"};
    if (r.sample_index == 2) return CompletionResult{0, "", "timeout"};
    return ok_text("x");
  });
  std::vector<long long> sleeps;
  std::mutex mu;
  auto opts = fast();
  opts.max_concurrency = 1;
  opts.sleep = [&](std::chrono::milliseconds d) {
    std::lock_guard lock(mu);
    sleeps.push_back(d.count());
  };
  auto res = translate_solution(job(3), client, opts);
  CHECK(res.job_error.empty());
  CHECK(res.outcomes[0].attempts == 1);
  CHECK(res.outcomes[1].attempts == 3);
  CHECK(res.outcomes[1].solution_id.has_value());
  CHECK(res.outcomes[2].attempts == 4);  // 1 + max_retries
  CHECK_FALSE(res.outcomes[2].solution_id.has_value());
  CHECK(res.outcomes[2].error == "timeout");
  CHECK(sleeps == std::vector<long long>{500, 1000, 500, 1000, 2000});
  CHECK(res.records.size() == 2);
}

TEST_CASE("a client error aborts the job") {
  FakeClient client([](const CompletionRequest&, int) { return CompletionResult{401, "", "unauthorized"}; });
  auto opts = fast();
  opts.max_concurrency = 1;
  auto res = translate_solution(job(4), client, opts);
  CHECK(res.job_error == "unauthorized");
  CHECK(client.calls == 1);
  CHECK(res.records.empty());
  for (int k = 1; k < 4; ++k) CHECK(res.outcomes[static_cast<size_t>(k)].error.rfind("aborted", 0) == 0);
}

TEST_CASE("rate limiting is retried, not fatal") {
  FakeClient client([](const CompletionRequest&, int attempt) {
    return attempt == 1 ? CompletionResult{429, "", "slow down"} : ok_text("x");
  });
  auto opts = fast();
  opts.max_concurrency = 1;
  auto res = translate_solution(job(2), client, opts);
  CHECK(res.job_error.empty());
  CHECK(res.records.size() == 2);
  CHECK(res.outcomes[0].attempts == 2);
}

TEST_CASE("concurrency limit is respected") {
  FakeClient client([](const CompletionRequest&, int) { return ok_text("x"); });
  auto opts = fast();
  opts.max_concurrency = 3;
  translate_solution(job(12), client, opts);
  CHECK(client.max_in_flight <= 3);
  CHECK(client.calls == 12);
}

TEST_CASE("cached responses skip requests") {
  FakeClient first([](const CompletionRequest& r, int) { return ok_text("v" + std::to_string(r.sample_index)); });
  auto a = translate_solution(job(3), first, fast());
  std::map<std::string, std::string> cache;
  for (const auto& o : a.outcomes) cache[o.idempotency_key] = *o.response_text;
  cache.erase(a.outcomes[2].idempotency_key);

  FakeClient second([](const CompletionRequest&, int) { return ok_text("fresh"); });
  auto opts = fast();
  opts.response_cache = &cache;
  auto b = translate_solution(job(3), second, opts);
  CHECK(second.calls == 1);
  CHECK(b.records[0].code == "v0");
  CHECK(b.records[1].code == "v1");
  CHECK(b.records[2].code == "fresh");
}

TEST_CASE("responses without a code block fail only that sample") {
  FakeClient client([](const CompletionRequest& r, int) {
    return r.sample_index == 0 ? CompletionResult{200, "I cannot do that.", ""} : ok_text("y");
  });
  auto res = translate_solution(job(2), client, fast());
  CHECK(res.records.size() == 1);
  CHECK(res.outcomes[0].error.find("extraction") != std::string::npos);
  CHECK(res.outcomes[0].response_text == "I cannot do that.");
}

TEST_CASE("invalid jobs are rejected") {
  FakeClient client([](const CompletionRequest&, int) { return ok_text("x"); });
  CHECK_THROWS_AS(translate_solution(job(0), client, fast()), ValidationError);
  auto j = job(1);
  j.target = language("python");
  CHECK_THROWS_AS(translate_solution(j, client, fast()), ValidationError);
}

TEST_CASE("http client speaks the configured wire format") {
  httplib::Server server;
  std::mutex mu;
  std::vector<json> bodies;
  std::vector<std::string> auth, keys;
  int failures_left = 1;
  server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu);
    bodies.push_back(json::parse(req.body));
    auth.push_back(req.get_header_value("Authorization"));
    keys.push_back(req.get_header_value("Idempotency-Key"));
    if (failures_left-- > 0) {
      res.status = 500;
      return;
    }
    res.set_content(json{{"choices", {{{"text", "```cpp\nint main(){}\n```"}}}}}.dump(), "application/json");
  });
  server.Post("/bad", [&](const httplib::Request&, httplib::Response& res) { res.status = 400; });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  setenv("FORGE_TEST_TOKEN", "s3cret", 1);
  EndpointConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  cfg.model = "m-1";
  cfg.token_env = "FORGE_TEST_TOKEN";
  HttpCompletionClient client(cfg);
  auto opts = fast();
  auto res = translate_solution(job(1), client, opts);
  REQUIRE(res.records.size() == 1);
  CHECK(res.records[0].code == "int main(){}");
  REQUIRE(bodies.size() == 2);
  CHECK(bodies[1]["model"] == "m-1");
  CHECK(bodies[1]["temperature"] == doctest::Approx(0.8));
  CHECK(bodies[1]["top_p"] == doctest::Approx(0.95));
  CHECK(bodies[1]["max_tokens"] == 2048);
  CHECK(bodies[1]["prompt"].get<std::string>().rfind("Translate the following code from Python to C++.", 0) == 0);
  CHECK(auth[1] == "Bearer s3cret");
  CHECK(keys[0] == keys[1]);  // retries reuse the key
  CHECK(keys[0] == res.outcomes[0].idempotency_key);

  cfg.path = "/bad";
  HttpCompletionClient bad(cfg);
  auto aborted = translate_solution(job(2), bad, opts);
  CHECK(aborted.job_error.find("400") != std::string::npos);

  cfg.token_env = "FORGE_TEST_TOKEN_UNSET";
  unsetenv("FORGE_TEST_TOKEN_UNSET");
  CHECK_THROWS_AS(HttpCompletionClient{cfg}, ValidationError);

  server.stop();
  t.join();

  // nothing listens any more: transport failures retry then give up
  cfg.token_env.clear();
  cfg.path = "/v1/completions";
  cfg.timeout = std::chrono::seconds(1);
  HttpCompletionClient gone(cfg);
  auto dead = translate_solution(job(1), gone, opts);
  CHECK(dead.records.empty());
  CHECK(dead.outcomes[0].attempts == 4);
  CHECK(dead.outcomes[0].error.rfind("transport", 0) == 0);
}
