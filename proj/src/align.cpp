#include "forge/align.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "httplib.h"

#include "forge/error.hpp"
#include "forge/hash.hpp"

namespace forge::align {

EchoPrompt render_echo_template(std::string_view code) {
  if (code.empty()) throw ValidationError("echo template: empty code");
  static constexpr std::string_view kPrefix = "Rewrite the following code: ";
  static constexpr std::string_view kMiddle = ". The rewritten code: ";
  EchoPrompt p;
  p.text.reserve(kPrefix.size() + kMiddle.size() + 2 * code.size());
  p.text.append(kPrefix).append(code).append(kMiddle);
  p.span_begin = p.text.size();
  p.text.append(code);
  p.span_end = p.text.size();
  return p;
}

std::pair<std::size_t, std::size_t> token_span(const TokenStates& states, std::size_t span_begin,
                                               std::size_t span_end) {
  std::size_t first = states.offsets.size(), last = 0;
  for (std::size_t t = 0; t < states.offsets.size(); ++t) {
    const auto [b, e] = states.offsets[t];
    if (b < span_end && e > span_begin) {
      first = std::min(first, t);
      last = t + 1;
    }
  }
  if (first >= last) return {0, 0};
  return {first, last};
}

std::vector<std::vector<double>> pool_representation(const std::vector<Matrix>& layers, std::size_t token_begin,
                                                     std::size_t token_end, std::string_view label) {
  if (token_begin >= token_end) {
    throw ValidationError("empty token span" + (label.empty() ? std::string() : " for " + std::string(label)));
  }
  std::vector<std::vector<double>> out;
  out.reserve(layers.size());
  for (const auto& m : layers) {
    if (token_end > m.rows()) throw ValidationError("token span exceeds layer rows");
    std::vector<double> mean(m.cols(), 0.0);
    for (std::size_t t = token_begin; t < token_end; ++t) {
      auto row = m.row(t);
      for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += row[k];
    }
    const double count = static_cast<double>(token_end - token_begin);
    for (auto& v : mean) v /= count;
    out.push_back(std::move(mean));
  }
  return out;
}

PooledEmbedding TokenLevelProvider::embed(const std::string& text, std::size_t span_begin, std::size_t span_end) {
  TokenStates states = token_states(text);
  auto span = token_span(states, span_begin, span_end);
  PooledEmbedding e;
  e.layers = pool_representation(states.layers, span.first, span.second,
                                 std::string_view(text).substr(span_begin, std::min<std::size_t>(40, span_end - span_begin)));
  e.token_span_used = span;
  return e;
}

// --- HashingProvider -----------------------------------------------------------

HashingProvider::HashingProvider(std::size_t layers, std::size_t hidden, std::uint64_t seed)
    : layers_(layers), hidden_(hidden), seed_(seed) {
  if (layers == 0 || hidden == 0) throw ValidationError("hashing provider needs layers and hidden size >= 1");
}

std::string HashingProvider::id() const {
  return "hashing-l" + std::to_string(layers_) + "-d" + std::to_string(hidden_) + "-s" + std::to_string(seed_);
}

TokenStates HashingProvider::token_states(const std::string& text) {
  TokenStates s;
  auto word = [](unsigned char c) { return std::isalnum(c) || c == '_'; };
  for (std::size_t i = 0; i < text.size();) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (word(c)) {
      std::size_t j = i;
      while (j < text.size() && word(static_cast<unsigned char>(text[j]))) ++j;
      s.offsets.emplace_back(i, j);
      i = j;
    } else {
      s.offsets.emplace_back(i, i + 1);
      ++i;
    }
  }
  const std::size_t T = s.offsets.size();
  Matrix base(T, hidden_);
  for (std::size_t t = 0; t < T; ++t) {
    const auto [b, e] = s.offsets[t];
    Rng rng(mix_seed(seed_, std::string_view(text).substr(b, e - b)));
    for (auto& v : base.row(t)) v = rng.normal();
  }
  for (std::size_t l = 0; l < layers_; ++l) {
    const double w = layers_ == 1 ? 0.5 : static_cast<double>(l) / static_cast<double>(layers_ - 1);
    Rng bias_rng(mix_seed(seed_, "bias:" + std::to_string(l)));
    std::vector<double> bias(hidden_);
    for (auto& v : bias) v = 0.5 * bias_rng.normal();
    Matrix m(T, hidden_);
    std::vector<double> running(hidden_, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      auto row = base.row(t);
      for (std::size_t k = 0; k < hidden_; ++k) {
        running[k] += row[k];
        m(t, k) = (1.0 - w) * row[k] + w * running[k] / static_cast<double>(t + 1) + bias[k];
      }
    }
    s.layers.push_back(std::move(m));
  }
  return s;
}

// --- wire format / HTTP ----------------------------------------------------------

json embedding_request_json(const std::string& text, std::size_t span_begin, std::size_t span_end) {
  return {{"text", text}, {"span_start", span_begin}, {"span_end", span_end}};
}

PooledEmbedding embedding_from_json(const json& j) {
  PooledEmbedding e;
  const json& layers = j.at("layers");
  if (!layers.is_array()) throw ValidationError("embedding response: 'layers' must be an array");
  for (const auto& layer : layers) e.layers.push_back(layer.get<std::vector<double>>());
  if (auto it = j.find("token_span_used"); it != j.end() && it->is_array() && it->size() == 2) {
    e.token_span_used = {(*it)[0].get<std::size_t>(), (*it)[1].get<std::size_t>()};
  }
  return e;
}

json to_json(const PooledEmbedding& e) {
  return {{"layers", e.layers}, {"token_span_used", {e.token_span_used.first, e.token_span_used.second}}};
}

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string base_url, std::string path, std::string provider_id,
                                             std::size_t layers, std::size_t hidden, int timeout_seconds)
    : base_url_(std::move(base_url)),
      path_(std::move(path)),
      id_(std::move(provider_id)),
      layers_(layers),
      hidden_(hidden),
      timeout_seconds_(timeout_seconds) {}

PooledEmbedding HttpEmbeddingProvider::embed(const std::string& text, std::size_t span_begin, std::size_t span_end) {
  httplib::Client cli(base_url_);
  cli.set_connection_timeout(timeout_seconds_, 0);
  cli.set_read_timeout(timeout_seconds_, 0);
  auto res = cli.Post(path_, embedding_request_json(text, span_begin, span_end).dump(), "application/json");
  if (!res) throw IoError("embedding provider " + id_ + ": " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw IoError("embedding provider " + id_ + ": http " + std::to_string(res->status));
  }
  try {
    return embedding_from_json(json::parse(res->body));
  } catch (const json::exception& e) {
    throw ValidationError("embedding provider " + id_ + ": bad response: " + e.what());
  }
}

CachingProvider::CachingProvider(EmbeddingProvider& inner, std::filesystem::path directory)
    : inner_(inner), directory_(std::move(directory)) {
  std::filesystem::create_directories(directory_);
}

PooledEmbedding CachingProvider::embed(const std::string& text, std::size_t span_begin, std::size_t span_end) {
  const std::string key = sha256_hex(inner_.id() + "\n" + sha256_hex(text) + "\n" + std::to_string(span_begin) +
                                     ":" + std::to_string(span_end));
  const auto file = directory_ / (key + ".json");
  std::error_code ec;
  if (std::filesystem::exists(file, ec)) {
    ++hits_;
    return embedding_from_json(json::parse(read_file(file)));
  }
  ++misses_;
  PooledEmbedding e = inner_.embed(text, span_begin, span_end);
  write_file_atomic(file, to_json(e).dump());
  return e;
}

// --- metrics -------------------------------------------------------------------

namespace {

void check_pair(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ValidationError("row count mismatch: " + std::to_string(a.rows()) + " vs " + std::to_string(b.rows()));
  }
  if (a.rows() < 2) throw ValidationError("alignment metrics need N >= 2");
}

bool is_hit(const Matrix& s, std::size_t i) {
  const double diag = s(i, i);
  for (std::size_t j = 0; j < s.cols(); ++j) {
    if (j != i && s(i, j) >= diag) return false;
  }
  return true;
}

double exact_baseline(const Matrix& s, std::size_t i) {
  double off = 0.0;
  for (std::size_t j = 0; j < s.cols(); ++j) {
    if (j != i) off += s(i, j);
  }
  return off / static_cast<double>(s.cols() - 1);
}

// Non-parallel partner of each row for the sampled baselines, drawn in row
// order so the result does not depend on threading.
std::vector<std::size_t> sample_partners(std::size_t n, Baseline baseline, Rng* rng) {
  if (!rng) throw ValidationError("sampled baseline requires an rng");
  std::vector<std::size_t> partner(n);
  if (baseline == Baseline::SingleSample) {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t j = static_cast<std::size_t>(rng->below(n - 1));
      partner[i] = j >= i ? j + 1 : j;
    }
    return partner;
  }
  std::iota(partner.begin(), partner.end(), 0);
  for (;;) {
    rng->shuffle(std::span(partner));
    bool deranged = true;
    for (std::size_t i = 0; i < n && deranged; ++i) deranged = partner[i] != i;
    if (deranged) return partner;
  }
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double retrieval_accuracy(const Matrix& a, const Matrix& b) {
  check_pair(a, b);
  const Matrix s = kernels::cosine_matrix(a, b);
  const auto n = static_cast<long long>(s.rows());
  long long hits = 0;
#pragma omp parallel for schedule(static) reduction(+ : hits)
  for (long long i = 0; i < n; ++i) hits += is_hit(s, static_cast<std::size_t>(i)) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(n);
}

double adjusted_cosine(const Matrix& a, const Matrix& b, Baseline baseline, Rng* rng) {
  check_pair(a, b);
  const Matrix s = kernels::cosine_matrix(a, b);
  const std::size_t n = s.rows();
  std::vector<std::size_t> partner;
  if (baseline != Baseline::Exact) partner = sample_partners(n, baseline, rng);
  std::vector<double> terms(n);
  const auto nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < nn; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    terms[i] = s(i, i) - (baseline == Baseline::Exact ? exact_baseline(s, i) : s(i, partner[i]));
  }
  return mean(terms);
}

namespace serial {

double retrieval_accuracy(const Matrix& a, const Matrix& b) {
  check_pair(a, b);
  const Matrix s = kernels::serial::cosine_matrix(a, b);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < s.rows(); ++i) hits += is_hit(s, i) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(s.rows());
}

double adjusted_cosine(const Matrix& a, const Matrix& b, Baseline baseline, Rng* rng) {
  check_pair(a, b);
  const Matrix s = kernels::serial::cosine_matrix(a, b);
  const std::size_t n = s.rows();
  std::vector<std::size_t> partner;
  if (baseline != Baseline::Exact) partner = sample_partners(n, baseline, rng);
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    terms[i] = s(i, i) - (baseline == Baseline::Exact ? exact_baseline(s, i) : s(i, partner[i]));
  }
  return mean(terms);
}

}  // namespace serial

// --- sweeps ----------------------------------------------------------------------

void validate(const ParallelProgramSet& set) {
  if (set.languages.empty()) throw ValidationError("program set has no languages");
  for (const auto& lang : set.languages) {
    auto it = set.programs.find(lang);
    if (it == set.programs.end() || it->second.size() != set.question_ids.size()) {
      throw ValidationError("program set: language " + lang + " is not index-aligned");
    }
  }
}

ParallelProgramSet build_program_set(const corpus::ParallelCorpus& corpus, const std::vector<std::string>& languages,
                                     std::size_t n, std::uint64_t seed, const std::set<std::string>& exclude) {
  std::vector<std::string> eligible;
  for (const auto& qid : corpus.question_ids()) {
    if (exclude.count(qid)) continue;
    bool complete = std::all_of(languages.begin(), languages.end(),
                                [&](const std::string& l) { return !corpus.cell(qid, l).empty(); });
    if (complete) eligible.push_back(qid);
  }
  Rng rng(mix_seed(seed, "program-set"));
  rng.shuffle(std::span(eligible));
  eligible.resize(std::min(n, eligible.size()));
  std::sort(eligible.begin(), eligible.end());

  ParallelProgramSet set;
  set.languages = languages;
  set.question_ids = eligible;
  set.disjoint_from_training = true;
  for (const auto& lang : languages) {
    auto& column = set.programs[lang];
    for (const auto& qid : eligible) {
      std::vector<std::pair<std::string, const corpus::SolutionRecord*>> cell;
      for (const auto& s : corpus.cell(qid, lang)) cell.emplace_back(code_hash(s.code), &s);
      std::sort(cell.begin(), cell.end(),
                [](const auto& x, const auto& y) { return x.first < y.first; });
      Rng pick(mix_seed(seed, "pick:" + qid + "\x1f" + lang));
      column.push_back(cell[pick.below(cell.size())].second->code);
    }
  }
  return set;
}

AlignmentReport layer_sweep(const ParallelProgramSet& set, EmbeddingProvider& provider,
                            const std::vector<std::pair<std::string, std::string>>& pairs,
                            const SweepOptions& options) {
  validate(set);
  const std::size_t L = provider.layer_count();
  const std::size_t d = provider.hidden_size();
  if (L < 1) throw ValidationError("provider declares no layers");
  for (const auto& [a, b] : pairs) {
    for (const auto* lang : {&a, &b}) {
      if (!set.programs.count(*lang)) throw ValidationError("pair language " + *lang + " not in program set");
    }
  }

  const std::size_t N = set.size();
  // reps[lang][layer] is an N x d matrix.
  std::map<std::string, std::vector<Matrix>> reps;
  for (const auto& lang : set.languages) {
    auto& per_layer = reps[lang];
    per_layer.assign(L, Matrix(N, d));
    for (std::size_t i = 0; i < N; ++i) {
      EchoPrompt echo = render_echo_template(set.programs.at(lang)[i]);
      PooledEmbedding e = provider.embed(echo.text, echo.span_begin, echo.span_end);
      if (e.layers.size() != L) {
        throw ValidationError("provider " + provider.id() + " returned " + std::to_string(e.layers.size()) +
                              " layers, declared " + std::to_string(L) + " (language " + lang + ", question " +
                              set.question_ids[i] + ")");
      }
      for (std::size_t l = 0; l < L; ++l) {
        if (e.layers[l].size() != d) {
          throw ValidationError("provider " + provider.id() + " returned width " + std::to_string(e.layers[l].size()) +
                                " at layer " + std::to_string(l) + ", declared " + std::to_string(d));
        }
        std::copy(e.layers[l].begin(), e.layers[l].end(), per_layer[l].row(i).begin());
      }
    }
  }

  AlignmentReport report;
  report.provider_id = provider.id();
  report.n = N;
  report.seed = options.seed;
  report.layers = L;
  report.pairs = pairs;
  for (std::size_t l = 0; l < L; ++l) {
    for (const auto& [a, b] : pairs) {
      const Matrix& ma = reps.at(a)[l];
      const Matrix& mb = reps.at(b)[l];
      Rng rng(mix_seed(options.seed, std::to_string(l) + ":" + a + ">" + b));
      report.rows.push_back({l, a, b, "retrieval_accuracy", retrieval_accuracy(ma, mb)});
      report.rows.push_back({l, a, b, "adjusted_cosine", adjusted_cosine(ma, mb, options.baseline, &rng)});
    }
  }
  return report;
}

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(10) << std::fixed << v;
  return ss.str();
}

}  // namespace

std::string alignment_csv(const AlignmentReport& report) {
  std::ostringstream out;
  out << "layer,lang_a,lang_b,metric,value\n";
  for (const auto& r : report.rows) {
    out << r.layer << "," << r.lang_a << "," << r.lang_b << "," << r.metric << "," << fmt(r.value) << "\n";
  }
  return out.str();
}

std::string averaged_series_csv(const AlignmentReport& report) {
  std::map<std::pair<std::size_t, std::string>, std::pair<double, std::size_t>> acc;
  for (const auto& r : report.rows) {
    auto& [sum, count] = acc[{r.layer, r.metric}];
    sum += r.value;
    ++count;
  }
  std::ostringstream out;
  out << "layer,metric,value\n";
  for (const auto& [key, v] : acc) {
    out << key.first << "," << key.second << "," << fmt(v.first / static_cast<double>(v.second)) << "\n";
  }
  return out.str();
}

}  // namespace forge::align
