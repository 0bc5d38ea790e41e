#include <httplib.h>

#include <cmath>
#include <regex>
#include <thread>

#include "doctest.h"
#include "properties.hpp"
#include "support.hpp"

#include "forge/align.hpp"
#include "forge/error.hpp"
#include "forge/hash.hpp"
#include "forge/kernels.hpp"

using namespace forge;
using namespace forge::align;

namespace {

/// Maps a program to a fixed vector keyed by the question it solves, so
/// every language agrees exactly. Records the spans it was asked for.
class StubProvider : public EmbeddingProvider {
 public:
  StubProvider(std::size_t layers, std::size_t hidden) : layers_(layers), hidden_(hidden) {}
  std::string id() const override { return "stub"; }
  std::size_t layer_count() const override { return layers_; }
  std::size_t hidden_size() const override { return hidden_; }
  PooledEmbedding embed(const std::string& text, std::size_t b, std::size_t e) override {
    std::string span = text.substr(b, e - b);
    spans.push_back(span);
    std::smatch m;
    REQUIRE(std::regex_search(span, m, std::regex("question (q[0-9]+)")));
    Rng rng(mix_seed(1, m[1].str()));
    PooledEmbedding out;
    for (std::size_t l = 0; l < layers_; ++l) {
      std::vector<double> v(hidden_);
      for (auto& x : v) x = rng.normal();
      out.layers.push_back(std::move(v));
    }
    out.token_span_used = {0, 1};
    return out;
  }
  std::vector<std::string> spans;

 private:
  std::size_t layers_, hidden_;
};

ParallelProgramSet stub_set(std::size_t n, const std::vector<std::string>& langs) {
  ParallelProgramSet s;
  s.languages = langs;
  for (std::size_t i = 0; i < n; ++i) {
    s.question_ids.push_back("q" + std::to_string(i));
    for (const auto& l : langs) s.programs[l].push_back("// " + l + " question q" + std::to_string(i) + "\n");
  }
  return s;
}

}  // namespace

TEST_CASE("echo template and pooled span") {
  auto p = render_echo_template("print(1)");
  CHECK(p.text == "Rewrite the following code: print(1). The rewritten code: print(1)");
  CHECK(p.span() == "print(1)");
  CHECK(p.span_end == p.text.size());
  CHECK(p.span_begin == p.text.size() - 8);
  CHECK_THROWS_AS(render_echo_template(""), ValidationError);
}

TEST_CASE("token span and mean pooling") {
  TokenStates s;
  s.offsets = {{0, 3}, {3, 4}, {5, 9}, {9, 10}};
  CHECK(token_span(s, 3, 9) == std::pair<std::size_t, std::size_t>{1, 3});
  CHECK(token_span(s, 4, 5) == std::pair<std::size_t, std::size_t>{0, 0});  // whitespace only
  CHECK(token_span(s, 8, 100) == std::pair<std::size_t, std::size_t>{2, 4});

  kernels::Matrix m = kernels::Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}, {7, 8}});
  auto pooled = pool_representation({m, m}, 1, 3);
  REQUIRE(pooled.size() == 2);
  CHECK(pooled[0] == std::vector<double>{4, 5});
  CHECK_THROWS_AS(pool_representation({m}, 2, 2, "prog"), ValidationError);
  CHECK_THROWS_AS(pool_representation({m}, 2, 5), ValidationError);
}

TEST_CASE("hashing provider is deterministic and pools the echo span") {
  HashingProvider h(4, 16, 9);
  auto p = render_echo_template("int main() { return 0; }");
  auto a = h.embed(p.text, p.span_begin, p.span_end);
  auto b = HashingProvider(4, 16, 9).embed(p.text, p.span_begin, p.span_end);
  CHECK(a.layers == b.layers);
  REQUIRE(a.layers.size() == 4);
  CHECK(a.layers[0].size() == 16);
  auto states = h.token_states(p.text);
  // every token in the pooled range lies inside the second copy
  for (std::size_t t = a.token_span_used.first; t < a.token_span_used.second; ++t) {
    CHECK(states.offsets[t].first >= p.span_begin);
  }
  auto c = HashingProvider(4, 16, 10).embed(p.text, p.span_begin, p.span_end);
  CHECK(c.layers != a.layers);
  CHECK_THROWS_AS(HashingProvider(0, 4, 1), ValidationError);
}

TEST_CASE("wire format round trip") {
  PooledEmbedding e;
  e.layers = {{0.5, -1.25}, {3.0, 4.0}};
  e.token_span_used = {7, 12};
  auto back = embedding_from_json(to_json(e));
  CHECK(back.layers == e.layers);
  CHECK(back.token_span_used == e.token_span_used);
  auto req = embedding_request_json("abc", 1, 2);
  CHECK(req["text"] == "abc");
  CHECK(req["span_start"] == 1);
  CHECK(req["span_end"] == 2);
  CHECK_THROWS_AS(embedding_from_json(json{{"layers", "nope"}}), Error);
}

TEST_CASE("caching provider serves repeats from disk") {
  testing::TempDir dir;
  HashingProvider h(2, 8, 1);
  auto p = render_echo_template("x = 1");
  PooledEmbedding first;
  {
    CachingProvider c(h, dir / "cache");
    first = c.embed(p.text, p.span_begin, p.span_end);
    c.embed(p.text, p.span_begin, p.span_end);
    CHECK(c.misses() == 1);
    CHECK(c.hits() == 1);
  }
  CachingProvider again(h, dir / "cache");
  auto second = again.embed(p.text, p.span_begin, p.span_end);
  CHECK(again.hits() == 1);
  CHECK(second.layers == first.layers);
}

TEST_CASE("metrics agree with a brute-force oracle") {
  CHECK(props::check_alignment_brute_force(100, 31) == "");
}

TEST_CASE("isotropic null: chance accuracy, zero adjusted cosine") {
  CHECK(props::check_isotropic_null(20, 312, 16, 5) == "");
}

TEST_CASE("single-sample baseline is unbiased") {
  CHECK(props::check_single_sample_unbiased(200, 17) == "");
}

TEST_CASE("metric edge cases") {
  auto a = kernels::Matrix::from_rows({{1, 0}, {0, 1}});
  CHECK(retrieval_accuracy(a, a) == 1.0);
  // identical rows tie, and ties are misses
  auto tied = kernels::Matrix::from_rows({{1, 0}, {1, 0}});
  CHECK(retrieval_accuracy(tied, tied) == 0.0);
  CHECK_THROWS_AS(retrieval_accuracy(kernels::Matrix::from_rows({{1, 0}}), kernels::Matrix::from_rows({{1, 0}})),
                  ValidationError);
  CHECK_THROWS_AS(retrieval_accuracy(kernels::Matrix::from_rows({{1, 0}, {0, 0}}), a), ValidationError);
  CHECK_THROWS_AS(adjusted_cosine(a, a, Baseline::SingleSample), ValidationError);
  // orthogonal unit rows: own cosine 1, others 0
  CHECK(adjusted_cosine(a, a, Baseline::Exact) == doctest::Approx(1.0));
  Rng rng(3);
  CHECK(adjusted_cosine(a, a, Baseline::Derangement, &rng) == doctest::Approx(1.0));
}

TEST_CASE("OpenMP kernels match the serial reference bit for bit") {
  Rng rng(77);
  for (int t = 0; t < 10; ++t) {
    auto a = props::random_matrix(5 + rng.below(60), 1 + rng.below(20), rng);
    auto b = props::random_matrix(a.rows(), a.cols(), rng);
    CHECK(kernels::cosine_matrix(a, b) == kernels::serial::cosine_matrix(a, b));
    CHECK(kernels::normalize_rows(a) == kernels::serial::normalize_rows(a));
    CHECK(retrieval_accuracy(a, b) == serial::retrieval_accuracy(a, b));
    Rng r1(t), r2(t);
    CHECK(adjusted_cosine(a, b, Baseline::SingleSample, &r1) == serial::adjusted_cosine(a, b, Baseline::SingleSample, &r2));
  }
  std::vector<double> values(97);
  for (auto& v : values) v = rng.unit();
  CHECK(kernels::bootstrap_means(values, 500, 4) == kernels::serial::bootstrap_means(values, 500, 4));
  CHECK(kernels::bootstrap_means(values, 0, 4).empty());
}

TEST_CASE("program set excludes training questions and stays aligned") {
  corpus::ParallelCorpus c;
  for (int q = 0; q < 12; ++q) {
    std::string qid = "q" + std::to_string(q);
    c.insert(testing::passed(qid, "python", "py " + qid));
    if (q != 5) c.insert(testing::passed(qid, "cpp", "cpp " + qid));
    if (q % 2 == 0) c.insert(testing::passed(qid, "cpp", "cpp alt " + qid, 1));
  }
  auto set = build_program_set(c, {"python", "cpp"}, 8, 3, {"q0", "q1"});
  CHECK(set.size() == 8);
  CHECK(set.disjoint_from_training);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& qid = set.question_ids[i];
    CHECK(qid != "q0");
    CHECK(qid != "q1");
    CHECK(qid != "q5");
    CHECK(set.programs["python"][i] == "py " + qid);
    CHECK(set.programs["cpp"][i].find(qid) != std::string::npos);
  }
  auto again = build_program_set(c, {"python", "cpp"}, 8, 3, {"q0", "q1"});
  CHECK(again.question_ids == set.question_ids);
  CHECK(again.programs == set.programs);
  // only 9 eligible questions exist
  CHECK(build_program_set(c, {"python", "cpp"}, 100, 3, {"q0", "q1"}).size() == 9);
}

TEST_CASE("layer sweep over a perfectly aligned stub") {
  StubProvider stub(3, 8);
  auto set = stub_set(10, {"python", "cpp", "go"});
  std::vector<std::pair<std::string, std::string>> pairs = {{"python", "cpp"}, {"cpp", "go"}};
  auto report = layer_sweep(set, stub, pairs, {5, Baseline::SingleSample});
  CHECK(report.rows.size() == 3 * pairs.size() * 2);
  CHECK(report.n == 10);
  CHECK(report.provider_id == "stub");
  for (const auto& r : report.rows) {
    if (r.metric == "retrieval_accuracy") CHECK(r.value == 1.0);
  }
  // the provider only ever saw the second copy of each program
  REQUIRE(stub.spans.size() == 30);
  CHECK(stub.spans[0] == set.programs["python"][0]);

  auto csv = alignment_csv(report);
  CHECK(csv.rfind("layer,lang_a,lang_b,metric,value\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
  CHECK(csv.find("0,python,cpp,retrieval_accuracy,1.0000000000\n") != std::string::npos);
  auto mean = averaged_series_csv(report);
  CHECK(std::count(mean.begin(), mean.end(), '\n') == 1 + 3 * 2);
  CHECK(mean.find("2,retrieval_accuracy,1.0000000000\n") != std::string::npos);

  CHECK(alignment_csv(layer_sweep(set, stub, pairs, {5, Baseline::SingleSample})) == csv);
  CHECK_THROWS_AS(layer_sweep(set, stub, {{"python", "lua"}}), ValidationError);
}

TEST_CASE("layer sweep rejects a provider that lies about its shape") {
  class Liar : public StubProvider {
   public:
    Liar() : StubProvider(2, 4) {}
    std::size_t layer_count() const override { return 3; }
  } liar;
  CHECK_THROWS_AS(layer_sweep(stub_set(3, {"python", "cpp"}), liar, {{"python", "cpp"}}), ValidationError);
}

TEST_CASE("http embedding provider against a stub server") {
  httplib::Server server;
  int requests = 0;
  server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    ++requests;
    auto body = json::parse(req.body);
    std::size_t b = body["span_start"], e = body["span_end"];
    double len = static_cast<double>(e - b);
    res.set_content(json{{"layers", {{len, 1.0}, {2.0, len}}}, {"token_span_used", {0, 3}}}.dump(),
                    "application/json");
  });
  server.Post("/bad", [](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
    res.set_content("boom", "text/plain");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  std::string url = "http://127.0.0.1:" + std::to_string(port);
  HttpEmbeddingProvider p(url, "/embed", "remote", 2, 2, 5);
  auto e = p.embed("abcdef", 2, 5);
  CHECK(e.layers == std::vector<std::vector<double>>{{3.0, 1.0}, {2.0, 3.0}});
  CHECK(e.token_span_used == std::pair<std::size_t, std::size_t>{0, 3});
  CHECK(requests == 1);
  HttpEmbeddingProvider bad(url, "/bad", "remote", 2, 2, 5);
  CHECK_THROWS_AS(bad.embed("abc", 0, 3), Error);

  server.stop();
  t.join();
}
