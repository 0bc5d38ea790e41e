#include "forge/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "httplib.h"

#include "forge/error.hpp"
#include "forge/kernels.hpp"
#include "forge/rng.hpp"
#include "forge/translator.hpp"

namespace forge::tasks {

namespace {

translate::LanguageDescriptor descriptor_for(const std::string& language) {
  for (const auto& l : translate::builtin_languages()) {
    if (l.short_name == language) return l;
  }
  return {language, language};
}

// Linear interpolation between order statistics (Hyndman-Fan type 7).
double quantile(std::vector<double>& sorted, double p) {
  if (sorted.size() == 1) return sorted.front();
  double h = p * static_cast<double>(sorted.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_interval(const std::vector<double>& per_unit, const BootstrapOptions& opt, std::string_view salt) {
  if (opt.resamples == 0) return {};
  auto means = kernels::bootstrap_means(per_unit, opt.resamples, mix_seed(opt.seed, salt));
  std::sort(means.begin(), means.end());
  const double alpha = 1.0 - opt.level;
  return {quantile(means, alpha / 2.0), quantile(means, 1.0 - alpha / 2.0)};
}

}  // namespace

Reward codegen_reward(const GenerationTaskInstance& instance, const std::string& response, sandbox::Judge& judge,
                      const sandbox::ResourceLimits& limits) {
  Reward r;
  auto code = translate::extract_code_block(response, descriptor_for(instance.target_language));
  if (!code) {
    r.diagnostic = "no code block";
    return r;
  }
  if (instance.question.tests.empty()) {
    r.diagnostic = "question has no tests";
    return r;
  }
  try {
    r.verdict = judge.judge(*code, instance.target_language, instance.question.tests, limits, {});
  } catch (const Error& e) {
    r.diagnostic = std::string("judge error: ") + e.what();
    return r;
  }
  r.value = r.verdict->accepted() ? 1 : 0;
  r.diagnostic = std::string(sandbox::to_string(r.verdict->overall));
  if (r.verdict->failing_test) r.diagnostic += " at test " + std::to_string(*r.verdict->failing_test);
  return r;
}

PassAtK pass_at_k(const std::vector<std::vector<bool>>& flags, const BootstrapOptions& bootstrap) {
  if (flags.empty()) throw ValidationError("pass@k over zero questions");
  const std::size_t k = flags.front().size();
  if (k == 0) throw ValidationError("pass@k with zero samples per question");
  std::vector<double> per_question_mean(flags.size()), per_question_any(flags.size());
  std::size_t passed = 0, solved = 0;
  for (std::size_t q = 0; q < flags.size(); ++q) {
    if (flags[q].size() != k) {
      throw ValidationError("ragged outcome table: question " + std::to_string(q) + " has " +
                            std::to_string(flags[q].size()) + " samples, expected " + std::to_string(k));
    }
    std::size_t c = static_cast<std::size_t>(std::count(flags[q].begin(), flags[q].end(), true));
    passed += c;
    solved += c > 0 ? 1 : 0;
    per_question_mean[q] = static_cast<double>(c) / static_cast<double>(k);
    per_question_any[q] = c > 0 ? 1.0 : 0.0;
  }
  PassAtK r;
  r.k = k;
  r.questions = flags.size();
  r.pass_at_1 = static_cast<double>(passed) / static_cast<double>(k * flags.size());
  r.pass_at_k = static_cast<double>(solved) / static_cast<double>(flags.size());
  r.ci_1 = bootstrap_interval(per_question_mean, bootstrap, "pass@1");
  r.ci_k = bootstrap_interval(per_question_any, bootstrap, "pass@k");
  return r;
}

double unbiased_pass_at_k(std::size_t n, std::size_t c, std::size_t k) {
  if (k == 0 || k > n || c > n) throw ValidationError("unbiased pass@k needs 0 < k <= n and c <= n");
  if (n - c < k) return 1.0;
  // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k / i)
  double ratio = 1.0;
  for (std::size_t i = n - c + 1; i <= n; ++i) ratio *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return 1.0 - ratio;
}

double estimate_pass_at_k(const std::vector<std::vector<bool>>& flags, std::size_t k) {
  if (flags.empty()) throw ValidationError("pass@k over zero questions");
  double sum = 0.0;
  for (const auto& q : flags) {
    if (q.size() != flags.front().size()) throw ValidationError("ragged outcome table");
    sum += unbiased_pass_at_k(q.size(), static_cast<std::size_t>(std::count(q.begin(), q.end(), true)), k);
  }
  return sum / static_cast<double>(flags.size());
}

BoolVerdict extract_boolean_verdict(std::string_view text, const VerdictPattern& pattern) {
  auto word_char = [](unsigned char c) { return std::isalnum(c) || c == '_'; };
  BoolVerdict last = BoolVerdict::Unparseable;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!word_char(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && word_char(static_cast<unsigned char>(text[j]))) ++j;
    std::string w(text.substr(i, j - i));
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    if (std::find(pattern.true_words.begin(), pattern.true_words.end(), w) != pattern.true_words.end()) {
      last = BoolVerdict::True;
    } else if (std::find(pattern.false_words.begin(), pattern.false_words.end(), w) != pattern.false_words.end()) {
      last = BoolVerdict::False;
    }
    i = j;
  }
  return last;
}

BalanceResult balance_eval_set(const std::map<std::string, std::vector<ValidationTaskInstance>>& by_language,
                               std::uint64_t seed) {
  BalanceResult out;
  for (const auto& [lang, items] : by_language) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!items[i].label) throw ValidationError("balance_eval_set: unlabeled instance in " + lang);
      (*items[i].label ? pos : neg).push_back(i);
    }
    if (pos.empty() || neg.empty()) {
      out.warnings.push_back("language " + lang + " dropped: " + std::to_string(pos.size()) + " true / " +
                             std::to_string(neg.size()) + " false");
      continue;
    }
    const std::size_t m = std::min(pos.size(), neg.size());
    Rng rng(mix_seed(seed, "balance:" + lang));
    std::vector<std::size_t> keep;
    for (auto* cls : {&pos, &neg}) {
      rng.shuffle(std::span(*cls));
      keep.insert(keep.end(), cls->begin(), cls->begin() + static_cast<std::ptrdiff_t>(m));
    }
    std::sort(keep.begin(), keep.end());
    auto& dst = out.by_language[lang];
    dst.reserve(keep.size());
    for (std::size_t i : keep) dst.push_back(items[i]);
  }
  return out;
}

Accuracy validation_accuracy(const std::vector<BoolVerdict>& predictions, const std::vector<bool>& labels,
                             const BootstrapOptions& bootstrap) {
  if (predictions.size() != labels.size()) {
    throw ValidationError("validation_accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                          std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ValidationError("validation_accuracy: empty input");
  Accuracy a;
  a.n = labels.size();
  std::vector<double> correct(labels.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] == BoolVerdict::Unparseable) ++a.unparseable;
    bool ok = predictions[i] != BoolVerdict::Unparseable && (predictions[i] == BoolVerdict::True) == labels[i];
    correct[i] = ok ? 1.0 : 0.0;
    hits += ok ? 1 : 0;
  }
  a.value = static_cast<double>(hits) / static_cast<double>(labels.size());
  a.ci = bootstrap_interval(correct, bootstrap, "accuracy");
  return a;
}

RlSplit build_codeforces_rl_split(std::vector<corpus::QuestionRecord> records) {
  RlSplit out;
  for (auto& r : records) {
    if (r.has_custom_checker) {
      ++out.dropped_custom_checker;
    } else if (!r.uses_stdin_stdout) {
      ++out.dropped_not_stdin_stdout;
    } else if (r.split == "train") {
      out.train.push_back(std::move(r));
    } else if (r.split == "test") {
      out.test.push_back(std::move(r));
    } else {
      ++out.untagged;
    }
  }
  return out;
}

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  out << "language,metric,value,ci_low,ci_high,n\n";
  out << std::fixed << std::setprecision(6);
  for (const auto& r : rows) {
    out << r.language << "," << r.metric << "," << r.value << "," << r.ci.low << "," << r.ci.high << "," << r.n
        << "\n";
  }
  return out.str();
}

// --- reward service --------------------------------------------------------------

struct RewardService::Server {
  httplib::Server http;
};

RewardService::RewardService(std::map<std::string, corpus::QuestionRecord> questions, sandbox::Judge& judge,
                             sandbox::ResourceLimits limits)
    : questions_(std::move(questions)), judge_(judge), limits_(limits), server_(std::make_shared<Server>()) {
  auto& http = server_->http;
  http.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"status\":\"ok\"}", "application/json");
  });
  http.Post("/reward", [this](const httplib::Request& req, httplib::Response& res) {
    json request;
    try {
      request = json::parse(req.body);
    } catch (const json::parse_error& e) {
      res.status = 400;
      res.set_content(json{{"reward", 0}, {"error", std::string("invalid JSON: ") + e.what()}}.dump(),
                      "application/json");
      return;
    }
    res.set_content(handle(request).dump(), "application/json");
  });
  http.Post("/rewards", [this](const httplib::Request& req, httplib::Response& res) {
    std::istringstream in(req.body);
    std::ostringstream out;
    serve_lines(in, out);
    res.set_content(out.str(), "application/x-ndjson");
  });
}

json RewardService::handle(const json& request) {
  json response{{"reward", 0}, {"diagnostic", ""}};
  if (!request.is_object()) {
    response["error"] = "request must be an object";
    return response;
  }
  auto field = [&](const char* name) -> std::optional<std::string> {
    auto it = request.find(name);
    if (it == request.end() || !it->is_string()) return std::nullopt;
    return it->get<std::string>();
  };
  auto qid = field("question_id");
  auto text = field("response_text");
  auto lang = field("language");
  if (qid) response["question_id"] = *qid;
  if (!qid || !text || !lang) {
    response["error"] = "request needs string fields question_id, response_text, language";
    return response;
  }
  auto q = questions_.find(*qid);
  if (q == questions_.end()) {
    response["error"] = "unknown question " + *qid;
    return response;
  }
  GenerationTaskInstance instance{q->second, *lang};
  Reward r = codegen_reward(instance, *text, judge_, limits_);
  response["reward"] = r.value;
  response["diagnostic"] = r.diagnostic;
  return response;
}

void RewardService::serve_lines(std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json response;
    try {
      response = handle(json::parse(line));
    } catch (const json::parse_error& e) {
      response = {{"reward", 0}, {"diagnostic", ""}, {"error", std::string("invalid JSON: ") + e.what()}};
    }
    out << response.dump() << "\n";
    out.flush();
  }
}

bool RewardService::serve_http(const std::string& host, int port) { return server_->http.listen(host, port); }

int RewardService::bind_http(const std::string& host) { return server_->http.bind_to_any_port(host); }

bool RewardService::listen_after_bind() { return server_->http.listen_after_bind(); }

void RewardService::stop() { server_->http.stop(); }

}  // namespace forge::tasks
