#include "forge/translator.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <mutex>

#include "httplib.h"

#include "forge/assets.hpp"
#include "forge/error.hpp"
#include "forge/hash.hpp"

namespace forge::translate {

const std::vector<LanguageDescriptor>& builtin_languages() {
  static const std::vector<LanguageDescriptor> kLanguages = {
      {"Python", "python"}, {"C", "c"},         {"C++", "cpp"},  {"Java", "java"},
      {"C#", "csharp"},     {"JavaScript", "javascript"},        {"Bash", "bash"},
      {"Lua", "lua"},       {"Go", "go"},       {"PHP", "php"},  {"Ruby", "ruby"},
  };
  return kLanguages;
}

const LanguageDescriptor& language(std::string_view short_name) {
  for (const auto& l : builtin_languages()) {
    if (l.short_name == short_name) return l;
  }
  throw ValidationError("unknown language '" + std::string(short_name) + "'");
}

void validate(const LanguageDescriptor& lang) {
  if (lang.short_name.empty()) throw ValidationError("language short name is empty");
  if (std::any_of(lang.short_name.begin(), lang.short_name.end(),
                  [](unsigned char c) { return std::isspace(c); })) {
    throw ValidationError("language short name contains whitespace: '" + lang.short_name + "'");
  }
}

std::string_view translation_prompt_template() { return assets::translation_prompt(); }

std::string render_translation_prompt(std::string_view code, std::string_view instruction,
                                      const LanguageDescriptor& target) {
  if (code.empty()) throw ValidationError("translation prompt: empty code");
  if (instruction.empty()) throw ValidationError("translation prompt: empty instruction");
  validate(target);
  const std::pair<std::string_view, std::string_view> subs[] = {
      {"{code}", code},
      {"{instruction}", instruction},
      {"{lg_long}", target.long_name},
      {"{lg_short}", target.short_name},
  };
  std::string_view tmpl = translation_prompt_template();
  std::string out;
  out.reserve(tmpl.size() + code.size() + instruction.size() + 64);
  size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [key, value] : subs) {
        if (tmpl.substr(i, key.size()) == key) {
          out.append(value);
          i += key.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out.push_back(tmpl[i++]);
  }
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
           return std::tolower(x) == std::tolower(y);
         });
}

struct Fence {
  std::string tag;
  std::string body;
};

// Splits a response into fenced blocks. An opening fence is a line whose
// trimmed text starts with ``` followed by an optional single-word tag; the
// block runs until the next bare ``` line (or the end of the text).
std::vector<Fence> scan_fences(std::string_view text) {
  std::vector<Fence> fences;
  std::optional<Fence> open;
  std::vector<std::string_view> body;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    std::string_view t = trim(line);
    if (!open) {
      if (t.substr(0, 3) == "```") {
        std::string_view tag = trim(t.substr(3));
        if (tag.find_first_of(" \t`") == std::string_view::npos) open = Fence{std::string(tag), {}};
      }
    } else if (t == "```") {
      std::string joined;
      for (size_t k = 0; k < body.size(); ++k) {
        if (k) joined.push_back('\n');
        joined.append(body[k]);
      }
      open->body = std::move(joined);
      fences.push_back(std::move(*open));
      open.reset();
      body.clear();
    } else {
      body.push_back(line);
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  if (open) {
    while (!body.empty() && trim(body.back()).empty()) body.pop_back();
    std::string joined;
    for (size_t k = 0; k < body.size(); ++k) {
      if (k) joined.push_back('\n');
      joined.append(body[k]);
    }
    open->body = std::move(joined);
    fences.push_back(std::move(*open));
  }
  return fences;
}

}  // namespace

std::optional<std::string> extract_code_block(std::string_view response,
                                              const LanguageDescriptor& target) {
  auto fences = scan_fences(response);
  for (auto it = fences.rbegin(); it != fences.rend(); ++it) {
    if (iequals(it->tag, target.short_name) || iequals(it->tag, target.long_name)) return it->body;
  }
  for (auto it = fences.rbegin(); it != fences.rend(); ++it) {
    if (it->tag.empty()) return it->body;
  }
  return std::nullopt;
}

void validate(const EndpointConfig& config) {
  if (config.max_concurrency < 1) throw ValidationError("endpoint: max concurrency must be >= 1");
  if (config.base_url.empty()) throw ValidationError("endpoint: base_url is empty");
  if (config.retry.max_retries < 0) throw ValidationError("endpoint: negative retry count");
  if (config.timeout.count() <= 0) throw ValidationError("endpoint: timeout must be positive");
}

HttpCompletionClient::HttpCompletionClient(EndpointConfig config) : config_(std::move(config)) {
  validate(config_);
  if (!config_.token_env.empty()) {
    const char* v = std::getenv(config_.token_env.c_str());
    if (!v) throw ValidationError("endpoint token variable " + config_.token_env + " is not set");
    token_ = v;
  }
}

CompletionResult HttpCompletionClient::complete(const CompletionRequest& request) {
  // httplib::Client is not shareable across threads; one per call is cheap
  // next to a generation.
  httplib::Client cli(config_.base_url);
  cli.set_connection_timeout(config_.timeout);
  cli.set_read_timeout(config_.timeout);
  cli.set_write_timeout(config_.timeout);
  httplib::Headers headers{{"Idempotency-Key", request.idempotency_key}};
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  const FieldMap& f = config_.fields;
  json body{{f.prompt, request.prompt},
            {f.temperature, request.params.temperature},
            {f.top_p, request.params.top_p},
            {f.max_tokens, request.params.max_tokens}};
  if (!f.model.empty()) body[f.model] = config_.model;

  CompletionResult result;
  auto res = cli.Post(config_.path, headers, body.dump(), "application/json");
  if (!res) {
    result.error = "transport: " + httplib::to_string(res.error());
    return result;
  }
  result.status = res->status;
  if (!result.ok()) {
    result.error = "http " + std::to_string(res->status) + ": " + res->body.substr(0, 512);
    return result;
  }
  try {
    json parsed = json::parse(res->body);
    const json& text = parsed.at(json::json_pointer(f.text_pointer));
    if (!text.is_string()) throw std::runtime_error("generated text is not a string");
    result.text = text.get<std::string>();
  } catch (const std::exception& e) {
    // A 2xx with an unusable body counts as a server fault so it is retried.
    result.status = 502;
    result.error = std::string("bad response body: ") + e.what();
  }
  return result;
}

std::string idempotency_key(std::string_view prompt, int sample_index) {
  std::string material(prompt);
  material += "\n#sample=" + std::to_string(sample_index);
  return sha256_hex(material);
}

TranslationResult translate_solution(const TranslationJob& job, CompletionClient& client,
                                     const TranslateOptions& options) {
  if (job.samples < 1) throw ValidationError("translation job: samples must be >= 1");
  if (options.max_concurrency < 1) throw ValidationError("translation job: max concurrency must be >= 1");
  validate(job.target);
  if (job.source_solution.language == job.target.short_name) {
    throw ValidationError("translation job: source and target language are both " +
                          job.target.short_name);
  }
  const std::string prompt =
      render_translation_prompt(job.source_solution.code, job.instruction, job.target);
  const std::string model = client.model_id();

  std::vector<SampleOutcome> outcomes(static_cast<size_t>(job.samples));
  std::vector<std::optional<corpus::SolutionRecord>> records(outcomes.size());
  std::atomic<int> next{0};
  std::atomic<bool> abort{false};
  std::mutex error_mutex;
  std::string job_error;

  auto run_sample = [&](int k) {
    SampleOutcome& out = outcomes[static_cast<size_t>(k)];
    out.sample_index = k;
    out.idempotency_key = idempotency_key(prompt, k);
    if (abort.load()) {
      out.error = "aborted: job stopped by client error";
      return;
    }
    std::optional<std::string> text;
    if (options.response_cache) {
      if (auto it = options.response_cache->find(out.idempotency_key);
          it != options.response_cache->end()) {
        text = it->second;
      }
    }
    auto backoff = options.retry.initial_backoff;
    while (!text) {
      CompletionRequest req{prompt, job.params, out.idempotency_key,
                            job.source_solution.solution_id, job.target.short_name, k};
      ++out.attempts;
      CompletionResult res = client.complete(req);
      if (res.ok()) {
        text = std::move(res.text);
        break;
      }
      // 429 is back-pressure and worth retrying; other client errors are not.
      if (res.status >= 400 && res.status < 500 && res.status != 429) {
        out.error = res.error.empty() ? "http " + std::to_string(res.status) : res.error;
        abort.store(true);
        std::lock_guard lock(error_mutex);
        if (job_error.empty()) job_error = out.error;
        return;
      }
      if (out.attempts > options.retry.max_retries) {
        out.error = res.error.empty() ? "request failed" : res.error;
        return;
      }
      options.sleep(backoff);
      backoff = std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(backoff.count()) * options.retry.backoff_multiplier));
    }
    out.response_text = *text;
    auto code = extract_code_block(*text, job.target);
    if (!code) {
      out.error = "extraction: no fenced code block";
      return;
    }
    corpus::SolutionRecord rec;
    rec.solution_id = corpus::translation_solution_id(job.source_solution.solution_id,
                                                      job.target.short_name, k);
    rec.question_id = job.source_solution.question_id;
    rec.language = job.target.short_name;
    rec.code = std::move(*code);
    rec.origin = corpus::TranslationOrigin{model, job.source_solution.solution_id, k};
    rec.verification = corpus::Unverified{};
    out.solution_id = rec.solution_id;
    records[static_cast<size_t>(k)] = std::move(rec);
  };

  const int workers = std::min(options.max_concurrency, job.samples);
  {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int k = next++; k < job.samples; k = next++) run_sample(k);
      });
    }
  }

  TranslationResult result;
  result.outcomes = std::move(outcomes);
  for (auto& r : records) {
    if (r) result.records.push_back(std::move(*r));
  }
  result.job_error = std::move(job_error);
  return result;
}

}  // namespace forge::translate
