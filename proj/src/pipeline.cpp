#include "forge/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "forge/error.hpp"
#include "forge/hash.hpp"
#include "forge/mixture.hpp"
#include "forge/rng.hpp"
#include "forge/tasks.hpp"

namespace forge::pipeline {

// --- configuration -----------------------------------------------------------

std::uint64_t PipelineConfig::seed(std::string_view stage) const {
  auto it = seeds.find(std::string(stage));
  if (it == seeds.end()) throw ValidationError("no seed for stage '" + std::string(stage) + "'");
  return it->second;
}

std::string interpolate_env(std::string_view text, const EnvLookup& env) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    if (text.compare(i, 3, "$${") == 0) {
      out += "${";
      i += 3;
      continue;
    }
    if (text.compare(i, 2, "${") != 0) {
      out += text[i++];
      continue;
    }
    auto close = text.find('}', i + 2);
    if (close == std::string_view::npos) {
      throw ValidationError("unterminated ${...} in config value '" + std::string(text) + "'");
    }
    std::string name(text.substr(i + 2, close - i - 2));
    if (name.empty()) throw ValidationError("empty ${} in config value");
    auto value = env(name);
    if (!value) throw ValidationError("environment variable " + name + " referenced by the config is not set");
    out += *value;
    i = close + 1;
  }
  return out;
}

namespace {

std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

json interpolate_tree(const json& node, const EnvLookup& env) {
  if (node.is_string()) return interpolate_env(node.get<std::string>(), env);
  if (node.is_array()) {
    json out = json::array();
    for (const auto& v : node) out.push_back(interpolate_tree(v, env));
    return out;
  }
  if (node.is_object()) {
    json out = json::object();
    for (auto it = node.begin(); it != node.end(); ++it) out[it.key()] = interpolate_tree(it.value(), env);
    return out;
  }
  return node;
}

// Typed field access with messages that name the offending key.
class Section {
 public:
  Section(const json& node, std::string where) : node_(node), where_(std::move(where)) {
    if (!node_.is_object()) throw ValidationError(where_ + " must be an object");
  }

  bool has(const char* key) const { return node_.contains(key) && !node_.at(key).is_null(); }

  template <typename T>
  T get(const char* key, T fallback) const {
    if (!has(key)) return fallback;
    return required<T>(key);
  }

  template <typename T>
  T required(const char* key) const {
    if (!has(key)) throw ValidationError(where_ + "." + key + " is required");
    try {
      return node_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(where_ + "." + key + ": " + e.what());
    }
  }

  Section child(const char* key) const { return Section(node_.at(key), where_ + "." + key); }
  const json& raw(const char* key) const { return node_.at(key); }
  const std::string& where() const { return where_; }

 private:
  const json& node_;
  std::string where_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

fs::path existing(const fs::path& base, const std::string& p, const std::string& what) {
  fs::path path = resolve(base, p);
  if (!fs::exists(path)) throw ValidationError(what + ": path does not exist: " + path.string());
  return path;
}

std::optional<fs::path> optional_path(const Section& s, const char* key, const fs::path& base) {
  if (!s.has(key)) return std::nullopt;
  return existing(base, s.required<std::string>(key), s.where() + "." + key);
}

align::Baseline parse_baseline(const std::string& name) {
  if (name == "exact") return align::Baseline::Exact;
  if (name == "single-sample") return align::Baseline::SingleSample;
  if (name == "derangement") return align::Baseline::Derangement;
  throw ValidationError("align.baseline must be exact, single-sample or derangement, not '" + name + "'");
}

std::string baseline_name(align::Baseline b) {
  switch (b) {
    case align::Baseline::Exact: return "exact";
    case align::Baseline::SingleSample: return "single-sample";
    case align::Baseline::Derangement: return "derangement";
  }
  return "?";
}

void check_language(const std::string& lang, const std::string& where) {
  translate::language(lang);  // throws for unknown ids
  (void)where;
}

std::vector<std::string> language_list(const Section& s, const char* key) {
  auto langs = s.required<std::vector<std::string>>(key);
  if (langs.empty()) throw ValidationError(s.where() + "." + key + " is empty");
  std::set<std::string> seen;
  for (const auto& l : langs) {
    check_language(l, s.where());
    if (!seen.insert(l).second) throw ValidationError(s.where() + "." + key + " repeats " + l);
  }
  return langs;
}

}  // namespace

PipelineConfig parse_config(const json& document, const fs::path& base_dir,
                            const std::vector<std::string>& seed_overrides, const EnvLookup& env_in) {
  EnvLookup env = env_in ? env_in : EnvLookup(process_env);
  PipelineConfig c;
  c.document = interpolate_tree(document, env);
  c.base_dir = base_dir;
  Section root(c.document, "config");
  const fs::path& base = c.base_dir;

  c.work_dir = resolve(base, root.get<std::string>("work_dir", "work"));
  c.runners = optional_path(root, "runners", base);

  if (root.has("seeds")) {
    Section seeds = root.child("seeds");
    for (auto it = c.document["seeds"].begin(); it != c.document["seeds"].end(); ++it) {
      if (std::find(kStages.begin(), kStages.end(), it.key()) == kStages.end()) {
        throw ValidationError("config.seeds: unknown stage '" + it.key() + "'");
      }
      c.seeds[it.key()] = seeds.required<std::uint64_t>(it.key().c_str());
    }
  }
  for (const auto& o : seed_overrides) {
    auto eq = o.find('=');
    std::string stage = o.substr(0, eq);
    if (eq == std::string::npos || std::find(kStages.begin(), kStages.end(), stage) == kStages.end()) {
      throw ValidationError("seed override must be <stage>=<integer>, got '" + o + "'");
    }
    std::uint64_t value = 0;
    const char* first = o.data() + eq + 1;
    const char* last = o.data() + o.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || first == last) {
      throw ValidationError("seed override '" + o + "': value is not a non-negative integer");
    }
    c.seeds[stage] = value;
  }

  if (root.has("ingest")) {
    Section s = root.child("ingest");
    IngestConfig x;
    x.dataset = existing(base, s.required<std::string>("dataset"), "config.ingest.dataset");
    x.format = s.get<std::string>("format", x.format);
    auto reserved = s.get<std::vector<std::string>>("reserved_sources", {});
    x.reserved_sources = {reserved.begin(), reserved.end()};
    x.require_stdin_stdout = s.get<bool>("require_stdin_stdout", true);
    x.rl_dataset = optional_path(s, "rl_dataset", base);
    c.ingest = x;
  }
  if (root.has("translate")) {
    Section s = root.child("translate");
    TranslateConfig x;
    x.client = s.get<std::string>("client", x.client);
    x.source_language = s.get<std::string>("source_language", x.source_language);
    check_language(x.source_language, "config.translate");
    x.target_languages = language_list(s, "target_languages");
    x.samples = s.get<int>("samples", x.samples);
    if (x.samples < 1) throw ValidationError("config.translate.samples must be >= 1");
    if (s.has("sampling")) {
      Section p = s.child("sampling");
      x.sampling.temperature = p.get<double>("temperature", x.sampling.temperature);
      x.sampling.top_p = p.get<double>("top_p", x.sampling.top_p);
      x.sampling.max_tokens = p.get<int>("max_tokens", x.sampling.max_tokens);
    }
    if (x.client == "replay") {
      x.replay = existing(base, s.required<std::string>("replay"), "config.translate.replay");
      x.endpoint.retry.max_retries = 0;
      x.endpoint.model = s.get<std::string>("model", "replay");
    } else if (x.client == "http") {
      Section e = s.child("endpoint");
      auto& ep = x.endpoint;
      ep.base_url = e.required<std::string>("base_url");
      ep.path = e.get<std::string>("path", ep.path);
      ep.model = e.required<std::string>("model");
      ep.token_env = e.get<std::string>("token_env", "");
      ep.timeout = std::chrono::seconds(e.get<int>("timeout_seconds", static_cast<int>(ep.timeout.count())));
      ep.max_concurrency = e.get<int>("max_concurrency", ep.max_concurrency);
      ep.retry.max_retries = e.get<int>("max_retries", ep.retry.max_retries);
      ep.retry.initial_backoff =
          std::chrono::milliseconds(e.get<int>("backoff_ms", static_cast<int>(ep.retry.initial_backoff.count())));
      ep.retry.backoff_multiplier = e.get<double>("backoff_multiplier", ep.retry.backoff_multiplier);
      if (e.has("fields")) {
        Section f = e.child("fields");
        ep.fields.prompt = f.get<std::string>("prompt", ep.fields.prompt);
        ep.fields.model = f.get<std::string>("model", ep.fields.model);
        ep.fields.temperature = f.get<std::string>("temperature", ep.fields.temperature);
        ep.fields.top_p = f.get<std::string>("top_p", ep.fields.top_p);
        ep.fields.max_tokens = f.get<std::string>("max_tokens", ep.fields.max_tokens);
        ep.fields.text_pointer = f.get<std::string>("text_pointer", ep.fields.text_pointer);
      }
      translate::validate(ep);
    } else {
      throw ValidationError("config.translate.client must be http or replay, not '" + x.client + "'");
    }
    c.translate = x;
  }
  if (root.has("verify")) {
    Section s = root.child("verify");
    VerifyConfig x;
    int workers = s.get<int>("workers", 1);
    if (workers < 1) throw ValidationError("config.verify.workers must be >= 1");
    x.workers = static_cast<unsigned>(workers);
    x.limits.wall_per_test = std::chrono::duration<double>(s.get<double>("wall_seconds", x.limits.wall_per_test.count()));
    x.limits.memory_bytes = s.get<std::size_t>("memory_mb", x.limits.memory_bytes >> 20) << 20;
    x.limits.output_bytes = s.get<std::size_t>("output_mb", x.limits.output_bytes >> 20) << 20;
    x.limits.compile_timeout =
        std::chrono::duration<double>(s.get<double>("compile_seconds", x.limits.compile_timeout.count()));
    sandbox::validate(x.limits);
    x.short_circuit = s.get<bool>("short_circuit", true);
    x.isolation = s.get<std::string>("isolation", x.isolation);
    if (x.isolation != "process" && x.isolation != "none") {
      throw ValidationError("config.verify.isolation must be process or none");
    }
    x.container_prefix = s.get<std::vector<std::string>>("container_prefix", {});
    c.verify = x;
  }
  if (root.has("mix")) {
    Section s = root.child("mix");
    MixConfig x;
    x.languages = language_list(s, "languages");
    x.budget = s.required<std::size_t>("budget");
    if (x.budget == 0) throw ValidationError("config.mix.budget must be positive");
    x.monolingual_language = s.get<std::string>("monolingual_language", x.languages.front());
    check_language(x.monolingual_language, "config.mix");
    x.oracle_language = s.get<std::string>("oracle_language", "");
    if (!x.oracle_language.empty()) check_language(x.oracle_language, "config.mix");
    x.general = optional_path(s, "general", base);
    c.mix = x;
  }
  if (root.has("evaluate")) {
    Section s = root.child("evaluate");
    EvaluateConfig x;
    x.codegen = optional_path(s, "codegen", base);
    x.validation = optional_path(s, "validation", base);
    x.resamples = s.get<std::size_t>("resamples", x.resamples);
    x.level = s.get<double>("level", x.level);
    if (!(x.level > 0.0 && x.level < 1.0)) throw ValidationError("config.evaluate.level must be in (0, 1)");
    if (!x.codegen && !x.validation) throw ValidationError("config.evaluate needs codegen and/or validation");
    c.evaluate = x;
  }
  if (root.has("align")) {
    Section s = root.child("align");
    AlignConfig x;
    x.languages = language_list(s, "languages");
    if (x.languages.size() < 2) throw ValidationError("config.align.languages needs at least two languages");
    x.n = s.get<std::size_t>("n", x.n);
    if (x.n < 2) throw ValidationError("config.align.n must be >= 2");
    x.provider = s.get<std::string>("provider", x.provider);
    x.layers = s.get<std::size_t>("layers", x.layers);
    x.hidden = s.get<std::size_t>("hidden", x.hidden);
    x.provider_seed = s.get<std::uint64_t>("provider_seed", x.provider_seed);
    if (x.provider == "http") {
      x.base_url = s.required<std::string>("base_url");
      x.path = s.get<std::string>("path", x.path);
      x.provider_id = s.required<std::string>("provider_id");
    } else if (x.provider != "hashing") {
      throw ValidationError("config.align.provider must be hashing or http");
    }
    x.baseline = parse_baseline(s.get<std::string>("baseline", "single-sample"));
    x.exclude_sft_questions = s.get<bool>("exclude_sft_questions", true);
    if (s.has("cache_dir")) x.cache_dir = resolve(base, s.required<std::string>("cache_dir"));
    c.align = x;
  }

  const std::pair<const char*, bool> configured[] = {
      {"ingest", c.ingest.has_value()}, {"translate", c.translate.has_value()},
      {"verify", c.verify.has_value()}, {"mix", c.mix.has_value()},
      {"evaluate", c.evaluate.has_value()}, {"align", c.align.has_value()}};
  for (const auto& [stage, present] : configured) {
    if (present && !c.seeds.count(stage)) {
      throw ValidationError("config.seeds." + std::string(stage) + " is required when the stage is configured");
    }
  }
  return c;
}

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& seed_overrides, const EnvLookup& env) {
  if (!fs::exists(path)) throw ValidationError("config file not found: " + path.string());
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return parse_config(doc, fs::absolute(path).parent_path(), seed_overrides, env);
}

// --- manifest ------------------------------------------------------------------

json to_json(const ManifestEntry& e) {
  return json{{"stage", e.stage},         {"status", e.status},
              {"inputs", e.inputs},       {"outputs", e.outputs},
              {"params_hash", e.params_hash}, {"params", e.params},
              {"counts", e.counts},       {"started_at", e.started_at},
              {"wall_seconds", e.wall_seconds}};
}

ManifestEntry manifest_entry_from_json(const json& j) {
  try {
    ManifestEntry e;
    e.stage = j.at("stage").get<std::string>();
    e.status = j.at("status").get<std::string>();
    e.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    e.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    e.params_hash = j.at("params_hash").get<std::string>();
    e.params = j.value("params", json());
    e.counts = j.value("counts", json::object());
    e.started_at = j.value("started_at", "");
    e.wall_seconds = j.value("wall_seconds", 0.0);
    return e;
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("malformed manifest entry: ") + ex.what());
  }
}

fs::path manifest_path(const PipelineConfig& config) { return config.work_dir / "manifest.jsonl"; }

std::vector<ManifestEntry> read_manifest(const PipelineConfig& config) {
  std::vector<ManifestEntry> out;
  auto path = manifest_path(config);
  if (!fs::exists(path)) return out;
  for (const auto& j : read_jsonl(path)) out.push_back(manifest_entry_from_json(j));
  return out;
}

namespace {

void append_manifest(const PipelineConfig& config, const ManifestEntry& e) {
  fs::create_directories(config.work_dir);
  std::ofstream out(manifest_path(config), std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to " + manifest_path(config).string());
  out << to_jsonl_line(to_json(e)) << '\n';
  out.flush();
  if (!out) throw IoError("write failed: " + manifest_path(config).string());
}

std::string utc_now() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

// --- shared stage plumbing ------------------------------------------------------

struct Paths {
  fs::path work;
  fs::path dir(std::string_view stage) const { return work / stage; }
  fs::path file(std::string_view stage, std::string_view name) const { return work / stage / name; }
};

void require_upstream(const fs::path& file, const std::string& upstream, std::string_view stage) {
  if (!fs::exists(file)) {
    throw UpstreamMissingError(upstream, "stage '" + std::string(stage) + "' needs the output of '" + upstream +
                                             "' (" + file.string() + " is missing); run `forge " + upstream +
                                             "` first");
  }
}

std::vector<corpus::QuestionRecord> read_questions(const fs::path& path) {
  std::vector<corpus::QuestionRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(corpus::question_from_json(j));
  return out;
}

std::vector<corpus::SolutionRecord> read_solutions(const fs::path& path) {
  std::vector<corpus::SolutionRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(corpus::solution_from_json(j));
  return out;
}

std::map<std::string, corpus::QuestionRecord> by_id(std::vector<corpus::QuestionRecord> records) {
  std::map<std::string, corpus::QuestionRecord> out;
  for (auto& q : records) {
    std::string id = q.question_id;
    out.emplace(std::move(id), std::move(q));
  }
  return out;
}

corpus::ParallelCorpus load_corpus(const Paths& p) {
  corpus::ParallelCorpus c;
  for (const auto& q : read_questions(p.file("ingest", "questions.jsonl"))) c.add_question(q.question_id);
  for (auto& s : read_solutions(p.file("verify", "corpus.jsonl"))) c.insert(std::move(s));
  return c;
}

std::string sha_of(const fs::path& p) { return sha256_file(p); }

// Collects the files a stage writes so they can be committed and hashed.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void write(const std::string& name, const std::string& content) {
    write_file_atomic(dir_ / name, content);
    names_.push_back(name);
  }
  void write_lines(const std::string& name, const std::vector<json>& rows) {
    AtomicFile f(dir_ / name);
    for (const auto& r : rows) f.write_line(r);
    f.commit();
    names_.push_back(name);
  }

  // Removes files left in the stage directory by earlier runs with a
  // different configuration.
  void prune() const {
    std::set<std::string> keep(names_.begin(), names_.end());
    for (const auto& entry : fs::directory_iterator(dir_)) {
      if (entry.is_regular_file() && !keep.count(entry.path().filename().string())) fs::remove(entry.path());
    }
  }

  std::map<std::string, std::string> hashes(const fs::path& work) const {
    std::map<std::string, std::string> out;
    for (const auto& n : names_) out[(dir_ / n).lexically_relative(work).generic_string()] = sha_of(dir_ / n);
    return out;
  }

 private:
  fs::path dir_;
  std::vector<std::string> names_;
};

struct StageRun {
  json counts = json::object();
};

std::unique_ptr<sandbox::Sandbox> make_sandbox(const PipelineConfig& config) {
  sandbox::SandboxOptions options;
  if (config.verify) {
    options.isolation = config.verify->isolation == "none" ? sandbox::Isolation::None : sandbox::Isolation::Process;
    options.container_prefix = config.verify->container_prefix;
  }
  return std::make_unique<sandbox::Sandbox>(load_registry(config), options);
}

sandbox::ResourceLimits limits_of(const PipelineConfig& config) {
  return config.verify ? config.verify->limits : sandbox::ResourceLimits{};
}

json rate_json(const sandbox::AcceptanceCount& c) {
  return {{"judged", c.judged}, {"accepted", c.accepted}, {"rate", c.rate()}, {"formatted", sandbox::format_rate(c)}};
}

// --- stages ----------------------------------------------------------------

StageRun run_ingest(const PipelineConfig& config, const Paths& p, Outputs& out) {
  const auto& cfg = *config.ingest;
  auto ingested = corpus::ingest_dataset(cfg.dataset, cfg.format);
  std::vector<corpus::QuestionRecord> questions;
  std::map<std::string, std::vector<corpus::SolutionRecord>> solutions;
  std::set<std::string> seen;
  std::vector<json> errors;
  for (auto& e : ingested.errors) errors.push_back({{"line", e.line}, {"message", e.message}});
  for (auto& item : ingested.items) {
    if (!seen.insert(item.question.question_id).second) {
      errors.push_back({{"line", item.line}, {"message", "duplicate question_id " + item.question.question_id}});
      continue;
    }
    solutions[item.question.question_id] = std::move(item.solutions);
    questions.push_back(std::move(item.question));
  }

  corpus::FilterOptions fo;
  fo.reserved_sources = cfg.reserved_sources;
  fo.require_stdin_stdout = cfg.require_stdin_stdout;
  auto filtered = corpus::filter_questions(std::move(questions), fo);

  std::vector<json> kept, human, dropped;
  json drop_counts = json::object();
  for (const auto& q : filtered.kept) {
    kept.push_back(corpus::to_json(q));
    for (const auto& s : solutions[q.question_id]) human.push_back(corpus::to_json(s));
  }
  for (const auto& d : filtered.dropped) {
    std::string reason(corpus::to_string(d.reason));
    dropped.push_back({{"question_id", d.question.question_id}, {"reason", reason}});
    drop_counts[reason] = drop_counts.value(reason, 0) + 1;
  }
  out.write_lines("questions.jsonl", kept);
  out.write_lines("human.jsonl", human);
  out.write_lines("dropped.jsonl", dropped);
  out.write_lines("errors.jsonl", errors);

  StageRun run;
  run.counts = {{"questions", kept.size()}, {"human_solutions", human.size()}, {"dropped", drop_counts},
                {"malformed_lines", errors.size()}};

  if (cfg.rl_dataset) {
    auto rl = corpus::ingest_dataset(*cfg.rl_dataset, cfg.format);
    std::vector<corpus::QuestionRecord> records;
    for (auto& item : rl.items) records.push_back(std::move(item.question));
    auto split = tasks::build_codeforces_rl_split(std::move(records));
    std::vector<json> train, test;
    for (const auto& q : split.train) train.push_back(corpus::to_json(q));
    for (const auto& q : split.test) test.push_back(corpus::to_json(q));
    out.write_lines("rl_train.jsonl", train);
    out.write_lines("rl_test.jsonl", test);
    run.counts["rl"] = {{"train", train.size()},
                        {"test", test.size()},
                        {"dropped_custom_checker", split.dropped_custom_checker},
                        {"dropped_not_stdin_stdout", split.dropped_not_stdin_stdout},
                        {"untagged", split.untagged},
                        {"malformed_lines", rl.errors.size()}};
  }
  (void)p;
  return run;
}

StageRun run_translate(const PipelineConfig& config, const Paths& p, Outputs& out, const StageContext& ctx) {
  const auto& cfg = *config.translate;
  auto questions = by_id(read_questions(p.file("ingest", "questions.jsonl")));
  auto human = read_solutions(p.file("ingest", "human.jsonl"));

  std::unique_ptr<translate::CompletionClient> owned;
  translate::CompletionClient* client = ctx.client;
  if (!client) {
    if (cfg.client == "replay") {
      owned = std::make_unique<ReplayClient>(*cfg.replay, cfg.endpoint.model);
    } else {
      owned = std::make_unique<translate::HttpCompletionClient>(cfg.endpoint);
    }
    client = owned.get();
  }

  // Responses survive crashes here; --resume reuses them.
  const fs::path cache_path = p.work / "cache" / "translate.jsonl";
  std::map<std::string, std::string> cache;
  if (ctx.resume && fs::exists(cache_path)) {
    for_each_line(cache_path, [&](std::size_t, const std::string& line) {
      try {
        auto j = json::parse(line);
        cache[j.at("key").get<std::string>()] = j.at("text").get<std::string>();
      } catch (const json::exception&) {
        // a torn final line from an interrupted run
      }
    });
  }
  fs::create_directories(cache_path.parent_path());
  std::ofstream cache_out(cache_path, std::ios::app | std::ios::binary);

  translate::TranslateOptions options;
  options.retry = cfg.endpoint.retry;
  options.max_concurrency = cfg.endpoint.max_concurrency;
  options.response_cache = &cache;
  if (ctx.sleep) options.sleep = ctx.sleep;

  std::vector<json> candidates, outcomes, synthetic;
  for (const auto& s : human) candidates.push_back(corpus::to_json(s));
  std::size_t jobs = 0, failed = 0, aborted = 0, reused = 0;
  for (const auto& source : human) {
    if (source.language != cfg.source_language) continue;
    auto q = questions.find(source.question_id);
    if (q == questions.end()) continue;
    for (const auto& target : cfg.target_languages) {
      if (target == source.language) continue;
      translate::TranslationJob job{source, q->second.statement, translate::language(target), cfg.samples,
                                    cfg.sampling};
      auto result = translate::translate_solution(job, *client, options);
      ++jobs;
      if (!result.job_error.empty()) ++aborted;
      for (const auto& o : result.outcomes) {
        if (o.response_text) {
          if (cache.count(o.idempotency_key)) {
            ++reused;
          } else {
            cache_out << to_jsonl_line({{"key", o.idempotency_key}, {"text", *o.response_text}}) << '\n';
          }
        }
        if (!o.solution_id) ++failed;
        outcomes.push_back({{"source_solution_id", source.solution_id},
                            {"target_language", target},
                            {"sample_index", o.sample_index},
                            {"solution_id", o.solution_id ? json(*o.solution_id) : json(nullptr)},
                            {"error", o.error},
                            {"idempotency_key", o.idempotency_key}});
      }
      cache_out.flush();
      for (const auto& r : result.records) synthetic.push_back(corpus::to_json(r));
    }
  }
  std::size_t translations = synthetic.size();
  candidates.insert(candidates.end(), synthetic.begin(), synthetic.end());
  out.write_lines("candidates.jsonl", candidates);
  out.write_lines("outcomes.jsonl", outcomes);

  StageRun run;
  run.counts = {{"jobs", jobs},       {"translations", translations}, {"failed_samples", failed},
                {"aborted_jobs", aborted}, {"human", human.size()},      {"cached_responses_reused", reused}};
  return run;
}

StageRun run_verify(const PipelineConfig& config, const Paths& p, Outputs& out, const StageContext& ctx) {
  auto questions = by_id(read_questions(p.file("ingest", "questions.jsonl")));
  auto candidates = read_solutions(config.translate ? p.file("translate", "candidates.jsonl")
                                                    : p.file("ingest", "human.jsonl"));

  std::unique_ptr<sandbox::Sandbox> owned;
  sandbox::Judge* judge = ctx.judge;
  std::vector<sandbox::Rejection> unjudgeable;
  if (!judge) {
    owned = make_sandbox(config);
    judge = owned.get();
    // Candidates in a language without a usable toolchain are rejected up
    // front instead of failing the whole stage.
    auto registry = load_registry(config);
    std::vector<corpus::SolutionRecord> judgeable;
    for (auto& c : candidates) {
      if (registry.find(c.language)) {
        judgeable.push_back(std::move(c));
      } else {
        unjudgeable.push_back({c.solution_id, c.question_id, c.language, "no-runner", std::nullopt});
      }
    }
    candidates = std::move(judgeable);
  }

  sandbox::VerifyOptions vo;
  vo.workers = config.verify->workers;
  vo.judge.short_circuit = config.verify->short_circuit;
  auto result = sandbox::verify_and_filter(candidates, questions, *judge, config.verify->limits, vo);

  std::vector<json> kept, rejected;
  for (const auto& [qid, cells] : result.corpus.entries()) {
    for (const auto& [lang, cell] : cells) {
      for (const auto& s : cell) kept.push_back(corpus::to_json(s));
    }
  }
  std::map<std::string, std::size_t> by_class;
  for (const auto* list : {&result.rejections, &unjudgeable}) {
    for (const auto& r : *list) {
      rejected.push_back(sandbox::to_json(r));
      ++by_class[r.verdict_class];
    }
  }
  out.write_lines("corpus.jsonl", kept);
  out.write_lines("rejections.jsonl", rejected);
  json summary = {{"human", rate_json(result.human)},
                  {"synthetic", rate_json(result.synthetic)},
                  {"duplicates", result.duplicates},
                  {"rejections", by_class},
                  {"questions", result.corpus.question_count()},
                  {"instances", result.corpus.total_instances()}};
  out.write("summary.json", summary.dump(2) + "\n");
  out.write("stats.csv", corpus::stats_csv(corpus::corpus_stats(result.corpus)));

  StageRun run;
  run.counts = {{"candidates", candidates.size() + unjudgeable.size()},
                {"kept", kept.size()},
                {"rejected", rejected.size()},
                {"synthetic_acceptance", sandbox::format_rate(result.synthetic)}};
  return run;
}

StageRun run_mix(const PipelineConfig& config, const Paths& p, Outputs& out) {
  const auto& cfg = *config.mix;
  const std::uint64_t seed = config.seed("mix");
  auto questions = read_questions(p.file("ingest", "questions.jsonl"));
  auto corpus = load_corpus(p);
  std::map<std::string, std::string> statements;
  for (const auto& q : questions) statements[q.question_id] = q.statement;

  // Every non-oracle mixture draws from the same questions, so the kinds
  // differ only in how languages are spread over them.
  std::vector<std::string> grid_langs = cfg.languages;
  if (std::find(grid_langs.begin(), grid_langs.end(), cfg.monolingual_language) == grid_langs.end()) {
    grid_langs.push_back(cfg.monolingual_language);
  }
  std::vector<std::string> common;
  for (const auto& qid : corpus.question_ids()) {
    if (std::all_of(grid_langs.begin(), grid_langs.end(),
                    [&](const std::string& l) { return !corpus.cell(qid, l).empty(); })) {
      common.push_back(qid);
    }
  }
  if (common.empty()) {
    throw InfeasibleError("no question has verified solutions in every mixture language");
  }

  std::vector<std::string> general;
  if (cfg.general) {
    for_each_line(*cfg.general, [&](std::size_t, const std::string& line) { general.push_back(line); });
  }

  mix::BuildInputs inputs{corpus, statements, common};
  std::vector<mix::SftMixture> mixtures;
  mixtures.push_back(mix::build_monolingual(inputs, cfg.monolingual_language, cfg.budget, seed));
  mixtures.push_back(mix::build_parallel(inputs, cfg.languages, cfg.budget, seed));
  mixtures.push_back(mix::build_nonparallel(inputs, cfg.languages, cfg.budget, seed));
  std::vector<std::string> oracle_questions;
  if (!cfg.oracle_language.empty()) {
    for (const auto& qid : corpus.question_ids()) {
      if (!corpus.cell(qid, cfg.oracle_language).empty()) oracle_questions.push_back(qid);
    }
    if (oracle_questions.empty()) {
      throw InfeasibleError("oracle mixture: no verified " + cfg.oracle_language + " solutions");
    }
    mix::BuildInputs oracle_inputs{corpus, statements, oracle_questions};
    mixtures.push_back(mix::build_oracle(oracle_inputs, cfg.oracle_language, cfg.budget, seed));
  }

  std::ostringstream summary;
  summary << "kind,language,instances,questions\n";
  StageRun run;
  for (const auto& m : mixtures) {
    std::string kind(mix::to_string(m.spec.kind));
    std::vector<json> rows, cells;
    std::map<std::string, std::size_t> per_lang;
    std::map<std::string, std::set<std::string>> per_lang_q;
    for (const auto& inst : m.instances) {
      rows.push_back(mix::to_json(inst));
      ++per_lang[inst.language];
      per_lang_q[inst.language].insert(inst.question_id);
    }
    std::size_t replaced = 0;
    for (const auto& c : m.allocation) {
      cells.push_back(mix::to_json(c));
      replaced += c.with_replacement ? 1 : 0;
    }
    out.write_lines("mixture_" + kind + ".jsonl", rows);
    out.write_lines("allocation_" + kind + ".jsonl", cells);
    for (const auto& [lang, n] : per_lang) summary << kind << "," << lang << "," << n << "," << per_lang_q[lang].size() << "\n";
    summary << kind << ",all," << m.instances.size() << "," << m.question_coverage() << "\n";
    if (cfg.general) {
      auto merged = mix::merge_with_general(m, general, mix_seed(seed, kind));
      std::string body;
      for (const auto& line : merged.lines) body += line + "\n";
      out.write("merged_" + kind + ".jsonl", body);
      out.write("composition_" + kind + ".txt", mix::composition_report(merged, m));
    }
    run.counts[kind] = {{"instances", m.instances.size()},
                        {"questions", m.question_coverage()},
                        {"cells_with_replacement", replaced},
                        {"partition_seed", m.partition_seed}};
  }
  out.write("summary.csv", summary.str());
  out.write("questions.json", json{{"questions", common}, {"oracle_questions", oracle_questions}}.dump(2) + "\n");
  run.counts["common_questions"] = common.size();
  return run;
}

StageRun run_evaluate(const PipelineConfig& config, const Paths& p, Outputs& out, const StageContext& ctx) {
  const auto& cfg = *config.evaluate;
  const std::uint64_t seed = config.seed("evaluate");
  auto questions = load_questions(config);
  std::vector<tasks::EvalRow> rows;
  StageRun run;

  if (cfg.codegen) {
    std::unique_ptr<sandbox::Sandbox> owned;
    sandbox::Judge* judge = ctx.judge;
    if (!judge) {
      owned = make_sandbox(config);
      judge = owned.get();
    }
    // language -> question -> sample index -> response
    std::map<std::string, std::map<std::string, std::map<int, std::string>>> samples;
    std::size_t line = 0;
    for (const auto& j : read_jsonl(*cfg.codegen)) {
      ++line;
      try {
        auto& slot = samples[j.at("language").get<std::string>()][j.at("question_id").get<std::string>()];
        if (!slot.emplace(j.at("sample_index").get<int>(), j.at("response_text").get<std::string>()).second) {
          throw ValidationError("duplicate sample");
        }
      } catch (const std::exception& e) {
        throw ValidationError(cfg.codegen->string() + " record " + std::to_string(line) + ": " + e.what());
      }
    }
    std::vector<json> rewards;
    for (const auto& [lang, by_q] : samples) {
      std::vector<std::vector<bool>> flags;
      for (const auto& [qid, by_k] : by_q) {
        auto q = questions.find(qid);
        if (q == questions.end()) throw ValidationError("codegen sample for unknown question " + qid);
        tasks::GenerationTaskInstance instance{q->second, lang};
        std::vector<bool> row;
        for (const auto& [k, text] : by_k) {
          auto r = tasks::codegen_reward(instance, text, *judge, limits_of(config));
          row.push_back(r.value == 1);
          rewards.push_back({{"question_id", qid},
                             {"language", lang},
                             {"sample_index", k},
                             {"reward", r.value},
                             {"diagnostic", r.diagnostic}});
        }
        flags.push_back(std::move(row));
      }
      tasks::BootstrapOptions b{cfg.resamples, mix_seed(seed, "codegen:" + lang), cfg.level};
      auto pk = tasks::pass_at_k(flags, b);
      rows.push_back({lang, "pass@1", pk.pass_at_1, pk.ci_1, pk.questions});
      rows.push_back({lang, "pass@" + std::to_string(pk.k), pk.pass_at_k, pk.ci_k, pk.questions});
    }
    out.write_lines("codegen_rewards.jsonl", rewards);
    run.counts["codegen_samples"] = rewards.size();
  }

  if (cfg.validation) {
    std::map<std::string, std::vector<tasks::ValidationTaskInstance>> by_lang;
    std::map<std::string, std::string> responses;
    std::size_t line = 0;
    for (const auto& j : read_jsonl(*cfg.validation)) {
      ++line;
      try {
        tasks::ValidationTaskInstance v;
        v.id = j.contains("id") ? j.at("id").get<std::string>() : "record-" + std::to_string(line);
        std::string qid = j.at("question_id").get<std::string>();
        auto q = questions.find(qid);
        if (q != questions.end()) {
          v.question = q->second;
        } else {
          v.question.question_id = qid;
        }
        v.candidate_language = j.at("language").get<std::string>();
        v.candidate_code = j.value("candidate_code", "");
        v.label = j.at("label").get<bool>();
        if (!responses.emplace(v.id, j.at("response_text").get<std::string>()).second) {
          throw ValidationError("duplicate id " + v.id);
        }
        by_lang[v.candidate_language].push_back(std::move(v));
      } catch (const std::exception& e) {
        throw ValidationError(cfg.validation->string() + " record " + std::to_string(line) + ": " + e.what());
      }
    }
    auto balanced = tasks::balance_eval_set(by_lang, mix_seed(seed, "balance"));
    std::size_t unparseable = 0;
    for (const auto& [lang, items] : balanced.by_language) {
      std::vector<tasks::BoolVerdict> predictions;
      std::vector<bool> labels;
      for (const auto& v : items) {
        predictions.push_back(tasks::extract_boolean_verdict(responses.at(v.id)));
        labels.push_back(*v.label);
      }
      tasks::BootstrapOptions b{cfg.resamples, mix_seed(seed, "validation:" + lang), cfg.level};
      auto acc = tasks::validation_accuracy(predictions, labels, b);
      unparseable += acc.unparseable;
      rows.push_back({lang, "validation_accuracy", acc.value, acc.ci, acc.n});
    }
    run.counts["validation_unparseable"] = unparseable;
    run.counts["balance_warnings"] = balanced.warnings;
  }

  out.write("eval.csv", tasks::eval_csv(rows));
  run.counts["rows"] = rows.size();
  (void)p;
  return run;
}

StageRun run_align(const PipelineConfig& config, const Paths& p, Outputs& out, const StageContext& ctx) {
  const auto& cfg = *config.align;
  const std::uint64_t seed = config.seed("align");
  auto corpus = load_corpus(p);

  std::set<std::string> exclude;
  if (cfg.exclude_sft_questions) {
    auto j = json::parse(read_file(p.file("mix", "questions.json")));
    for (const auto& key : {"questions", "oracle_questions"}) {
      for (const auto& q : j.at(key)) exclude.insert(q.get<std::string>());
    }
  }
  auto set = align::build_program_set(corpus, cfg.languages, cfg.n, seed, exclude);
  set.disjoint_from_training = cfg.exclude_sft_questions;
  if (set.size() < 2) {
    throw InfeasibleError("alignment needs at least 2 held-out questions with verified solutions in every "
                          "alignment language; found " + std::to_string(set.size()));
  }

  std::unique_ptr<align::EmbeddingProvider> owned;
  align::EmbeddingProvider* provider = ctx.provider;
  if (!provider) {
    if (cfg.provider == "http") {
      owned = std::make_unique<align::HttpEmbeddingProvider>(cfg.base_url, cfg.path, cfg.provider_id, cfg.layers,
                                                             cfg.hidden);
    } else {
      owned = std::make_unique<align::HashingProvider>(cfg.layers, cfg.hidden, cfg.provider_seed);
    }
    provider = owned.get();
  }
  std::unique_ptr<align::CachingProvider> cached;
  if (cfg.cache_dir) {
    cached = std::make_unique<align::CachingProvider>(*provider, *cfg.cache_dir);
    provider = cached.get();
  }

  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& a : cfg.languages) {
    for (const auto& b : cfg.languages) {
      if (a != b) pairs.emplace_back(a, b);
    }
  }
  auto report = align::layer_sweep(set, *provider, pairs, {seed, cfg.baseline});
  out.write("alignment.csv", align::alignment_csv(report));
  out.write("alignment_mean.csv", align::averaged_series_csv(report));
  json info = {{"provider", report.provider_id},
               {"languages", set.languages},
               {"question_ids", set.question_ids},
               {"n", set.size()},
               {"layers", report.layers},
               {"baseline", baseline_name(cfg.baseline)},
               {"disjoint_from_training", set.disjoint_from_training}};
  out.write("program_set.json", info.dump(2) + "\n");

  StageRun run;
  run.counts = {{"n", set.size()}, {"layers", report.layers}, {"pairs", pairs.size()}, {"rows", report.rows.size()}};
  if (cached) run.counts["cache"] = {{"hits", cached->hits()}, {"misses", cached->misses()}};
  return run;
}

// Upstream files each stage reads, with the stage that writes them.
std::vector<std::pair<fs::path, std::string>> upstream_of(const PipelineConfig& c, std::string_view stage,
                                                          const Paths& p) {
  std::vector<std::pair<fs::path, std::string>> up;
  auto add = [&](std::string_view s, std::string_view f) { up.emplace_back(p.file(s, f), std::string(s)); };
  if (stage == "translate") {
    add("ingest", "questions.jsonl");
    add("ingest", "human.jsonl");
  } else if (stage == "verify") {
    add("ingest", "questions.jsonl");
    if (c.translate) {
      add("translate", "candidates.jsonl");
    } else {
      add("ingest", "human.jsonl");
    }
  } else if (stage == "mix") {
    add("ingest", "questions.jsonl");
    add("verify", "corpus.jsonl");
  } else if (stage == "evaluate") {
    add("ingest", "questions.jsonl");
  } else if (stage == "align") {
    add("ingest", "questions.jsonl");
    add("verify", "corpus.jsonl");
    if (c.align && c.align->exclude_sft_questions) add("mix", "questions.json");
  }
  return up;
}

std::vector<fs::path> external_inputs(const PipelineConfig& c, std::string_view stage, const Paths& p) {
  std::vector<fs::path> in;
  auto opt = [&](const std::optional<fs::path>& f) {
    if (f) in.push_back(*f);
  };
  if (stage == "ingest") {
    in.push_back(c.ingest->dataset);
    opt(c.ingest->rl_dataset);
  } else if (stage == "translate") {
    opt(c.translate->replay);
  } else if (stage == "verify") {
    opt(c.runners);
  } else if (stage == "mix") {
    opt(c.mix->general);
  } else if (stage == "evaluate") {
    opt(c.evaluate->codegen);
    opt(c.evaluate->validation);
    opt(c.runners);
    for (const char* f : {"rl_train.jsonl", "rl_test.jsonl"}) {
      if (fs::exists(p.file("ingest", f))) in.push_back(p.file("ingest", f));
    }
  }
  return in;
}

bool configured(const PipelineConfig& c, std::string_view stage) {
  if (stage == "ingest") return c.ingest.has_value();
  if (stage == "translate") return c.translate.has_value();
  if (stage == "verify") return c.verify.has_value();
  if (stage == "mix") return c.mix.has_value();
  if (stage == "evaluate") return c.evaluate.has_value();
  if (stage == "align") return c.align.has_value();
  return false;
}

std::string input_key(const PipelineConfig& c, const fs::path& path) {
  auto rel = path.lexically_proximate(c.work_dir);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return path.lexically_proximate(c.base_dir).generic_string();
}

bool outputs_intact(const PipelineConfig& c, const std::map<std::string, std::string>& outputs) {
  for (const auto& [rel, hash] : outputs) {
    auto path = c.work_dir / rel;
    if (!fs::exists(path) || sha_of(path) != hash) return false;
  }
  return true;
}

}  // namespace

ManifestEntry run_stage(const PipelineConfig& config, std::string_view stage, const StageContext& context) {
  if (std::find(kStages.begin(), kStages.end(), stage) == kStages.end()) {
    throw ValidationError("unknown stage '" + std::string(stage) + "'");
  }
  if (!configured(config, stage)) {
    throw ValidationError("stage '" + std::string(stage) + "' has no section in the config");
  }
  const Paths p{config.work_dir};
  for (const auto& [file, upstream] : upstream_of(config, stage, p)) require_upstream(file, upstream, stage);

  ManifestEntry entry;
  entry.stage = std::string(stage);
  for (const auto& [file, _] : upstream_of(config, stage, p)) entry.inputs[input_key(config, file)] = sha_of(file);
  for (const auto& file : external_inputs(config, stage, p)) entry.inputs[input_key(config, file)] = sha_of(file);
  // translate/verify read one of two candidate sources depending on config;
  // the parameter snapshot records which stages were configured.
  json present = json::array();
  for (const auto& s : kStages) {
    if (configured(config, s)) present.push_back(s);
  }
  entry.params = {{"config", config.document.value(std::string(stage), json())},
                  {"seed", config.seed(stage)},
                  {"configured_stages", present}};
  entry.params_hash = sha256_hex(entry.params.dump());
  entry.started_at = utc_now();

  auto history = read_manifest(config);
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    if (it->stage != stage) continue;
    if (it->inputs == entry.inputs && it->params_hash == entry.params_hash && outputs_intact(config, it->outputs)) {
      entry.status = "skipped";
      entry.outputs = it->outputs;
      entry.counts = it->counts;
      append_manifest(config, entry);
      return entry;
    }
    break;
  }

  const auto t0 = std::chrono::steady_clock::now();
  Outputs out(p.dir(stage));
  StageRun run;
  if (stage == "ingest") {
    run = run_ingest(config, p, out);
  } else if (stage == "translate") {
    run = run_translate(config, p, out, context);
  } else if (stage == "verify") {
    run = run_verify(config, p, out, context);
  } else if (stage == "mix") {
    run = run_mix(config, p, out);
  } else if (stage == "evaluate") {
    run = run_evaluate(config, p, out, context);
  } else {
    run = run_align(config, p, out, context);
  }
  out.prune();
  entry.status = "completed";
  entry.outputs = out.hashes(config.work_dir);
  entry.counts = run.counts;
  entry.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(config, entry);
  return entry;
}

// --- reports -----------------------------------------------------------------

ReportKind report_kind(std::string_view name) {
  if (name == "stats") return ReportKind::Stats;
  if (name == "mixture") return ReportKind::Mixture;
  if (name == "eval") return ReportKind::Eval;
  if (name == "alignment") return ReportKind::Alignment;
  throw ValidationError("report kind must be stats, mixture, eval or alignment, not '" + std::string(name) + "'");
}

namespace {

void require_stage_output(const PipelineConfig& config, const std::string& stage, const fs::path& file) {
  auto history = read_manifest(config);
  bool ran = std::any_of(history.begin(), history.end(), [&](const ManifestEntry& e) { return e.stage == stage; });
  if (!ran || !fs::exists(file)) {
    throw UpstreamMissingError(stage, "report needs the output of '" + stage + "' (" + file.string() +
                                          "); run `forge " + stage + "` first");
  }
}

std::string gnuplot_bars(const std::string& csv, const std::string& title, int value_column, int label_column) {
  std::ostringstream s;
  s << "set datafile separator ','\n"
    << "set terminal pngcairo size 900,500\n"
    << "set output '" << fs::path(csv).stem().string() << ".png'\n"
    << "set title '" << title << "'\n"
    << "set style data histograms\nset style fill solid 0.8\nset xtics rotate by -45\nset key off\n"
    << "plot '" << csv << "' every ::1 using " << value_column << ":xtic(" << label_column << ")\n";
  return s.str();
}

}  // namespace

std::vector<fs::path> emit_report(const PipelineConfig& config, ReportKind kind, bool plot) {
  const Paths p{config.work_dir};
  const fs::path dir = config.work_dir / "reports";
  fs::create_directories(dir);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    write_file_atomic(dir / name, content);
    written.push_back(dir / name);
  };

  switch (kind) {
    case ReportKind::Stats: {
      require_stage_output(config, "verify", p.file("verify", "corpus.jsonl"));
      auto corpus = load_corpus(p);
      emit("stats.csv", corpus::stats_csv(corpus::corpus_stats(corpus)));
      if (plot) emit("stats.gp", gnuplot_bars("stats.csv", "verified instances per language", 3, 2));
      break;
    }
    case ReportKind::Mixture: {
      require_stage_output(config, "mix", p.file("mix", "summary.csv"));
      emit("mixture.csv", read_file(p.file("mix", "summary.csv")));
      if (plot) emit("mixture.gp", gnuplot_bars("mixture.csv", "mixture composition", 3, 1));
      break;
    }
    case ReportKind::Eval: {
      require_stage_output(config, "evaluate", p.file("evaluate", "eval.csv"));
      emit("eval.csv", read_file(p.file("evaluate", "eval.csv")));
      if (plot) {
        std::ostringstream s;
        s << "set datafile separator ','\nset terminal pngcairo size 900,500\nset output 'eval.png'\n"
          << "set style data histograms\nset style histogram errorbars gap 2\nset style fill solid 0.8\n"
          << "set yrange [0:1]\nset key off\nset xtics rotate by -45\n"
          << "plot 'eval.csv' every ::1 using 3:4:5:xtic(sprintf('%s %s', strcol(1), strcol(2)))\n";
        emit("eval.gp", s.str());
      }
      break;
    }
    case ReportKind::Alignment: {
      require_stage_output(config, "align", p.file("align", "alignment.csv"));
      emit("alignment.csv", read_file(p.file("align", "alignment.csv")));
      emit("alignment_mean.csv", read_file(p.file("align", "alignment_mean.csv")));
      if (plot) {
        std::ostringstream s;
        s << "set datafile separator ','\nset terminal pngcairo size 900,500\nset output 'alignment.png'\n"
          << "set xlabel 'layer'\nset key outside\n"
          << "plot for [m in 'retrieval_accuracy adjusted_cosine'] 'alignment_mean.csv' every ::1 "
          << "using 1:(strcol(2) eq m ? $3 : NaN) with linespoints title m\n";
        emit("alignment.gp", s.str());
      }
      break;
    }
  }
  return written;
}

// --- collaborators -------------------------------------------------------------

ReplayClient::ReplayClient(const fs::path& path, std::string model) : model_(std::move(model)) {
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    try {
      auto key = std::make_tuple(j.at("source_solution_id").get<std::string>(),
                                 j.at("target_language").get<std::string>(), j.at("sample_index").get<int>());
      responses_[key] = j.at("text").get<std::string>();
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + " record " + std::to_string(line) + ": " + e.what());
    }
  }
}

translate::CompletionResult ReplayClient::complete(const translate::CompletionRequest& request) {
  auto it = responses_.find({request.source_solution_id, request.target_language, request.sample_index});
  if (it == responses_.end()) return {0, "", "no canned response"};
  return {200, it->second, ""};
}

std::map<std::string, corpus::QuestionRecord> load_questions(const PipelineConfig& config) {
  const Paths p{config.work_dir};
  std::map<std::string, corpus::QuestionRecord> out;
  for (const char* f : {"questions.jsonl", "rl_train.jsonl", "rl_test.jsonl"}) {
    auto path = p.file("ingest", f);
    if (!fs::exists(path)) continue;
    for (auto& q : read_questions(path)) {
      std::string id = q.question_id;
      out.emplace(std::move(id), std::move(q));
    }
  }
  return out;
}

sandbox::RunnerRegistry load_registry(const PipelineConfig& config) {
  if (config.runners) return sandbox::RunnerRegistry::load(*config.runners, {true});
  return sandbox::RunnerRegistry::builtin();
}

}  // namespace forge::pipeline
