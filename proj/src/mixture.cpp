#include "forge/mixture.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "forge/assets.hpp"
#include "forge/error.hpp"
#include "forge/hash.hpp"
#include "forge/rng.hpp"
#include "forge/translator.hpp"

namespace forge::mix {

std::string_view to_string(MixtureKind kind) {
  switch (kind) {
    case MixtureKind::Monolingual: return "monolingual";
    case MixtureKind::Parallel: return "parallel";
    case MixtureKind::NonParallel: return "nonparallel";
    case MixtureKind::Oracle: return "oracle";
  }
  return "unknown";
}

MixtureKind mixture_kind(std::string_view name) {
  for (auto k : {MixtureKind::Monolingual, MixtureKind::Parallel, MixtureKind::NonParallel, MixtureKind::Oracle}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown mixture kind '" + std::string(name) + "'");
}

void validate(const MixtureSpec& spec) {
  if (spec.budget < 1) throw ValidationError("mixture budget must be >= 1");
  if (spec.languages.empty()) throw ValidationError("mixture needs at least one language");
  std::set<std::string> unique(spec.languages.begin(), spec.languages.end());
  if (unique.size() != spec.languages.size()) throw ValidationError("mixture languages contain duplicates");
  bool single = spec.kind == MixtureKind::Monolingual || spec.kind == MixtureKind::Oracle;
  if (single && spec.languages.size() != 1) {
    throw ValidationError(std::string(to_string(spec.kind)) + " mixture takes exactly one language");
  }
}

CoverageGrid CoverageGrid::of(const corpus::ParallelCorpus& corpus, std::vector<std::string> question_ids) {
  CoverageGrid g;
  g.question_ids = question_ids.empty() ? corpus.question_ids() : std::move(question_ids);
  for (const auto& qid : g.question_ids) {
    auto q = corpus.entries().find(qid);
    if (q == corpus.entries().end()) continue;
    for (const auto& [lang, cell] : q->second) {
      if (!cell.empty()) g.nonempty.insert({qid, lang});
    }
  }
  return g;
}

namespace {

// Splits `total` over `n` slots: floor(total/n) each, plus one for the first
// total mod n slots of a seeded shuffle.
std::vector<std::size_t> spread(std::size_t total, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> out(n, n ? total / n : 0);
  if (n == 0) return out;
  std::size_t remainder = total % n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));
  for (std::size_t i = 0; i < remainder; ++i) ++out[order[i]];
  return out;
}

[[noreturn]] void throw_empty_cells(const std::vector<std::pair<std::string, std::string>>& empty,
                                    std::string_view what) {
  std::ostringstream ss;
  ss << what << ": " << empty.size() << " empty cell(s):";
  for (std::size_t i = 0; i < empty.size() && i < 20; ++i) {
    ss << " (" << empty[i].first << ", " << empty[i].second << ")";
  }
  if (empty.size() > 20) ss << " ...";
  throw InfeasibleError(ss.str());
}

void require_budget(std::size_t budget, std::size_t needed, std::string_view why) {
  if (budget < needed) {
    throw InfeasibleError("budget " + std::to_string(budget) + " < " + std::to_string(needed) + " required (" +
                          std::string(why) + "); shortfall " + std::to_string(needed - budget));
  }
}

// Per-language totals of a budget, remainder to languages in seeded order.
std::vector<std::size_t> language_totals(const MixtureSpec& spec) {
  return spread(spec.budget, spec.languages.size(), mix_seed(spec.seed, "language-totals"));
}

}  // namespace

Allocation allocate_budget(const MixtureSpec& spec, const CoverageGrid& grid) {
  validate(spec);
  const auto& qids = grid.question_ids;
  const std::size_t Q = qids.size();
  const std::size_t L = spec.languages.size();
  if (Q == 0) throw InfeasibleError("mixture over zero questions");

  Allocation alloc;
  alloc.partition_seed = spec.partition_seed;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> targets;  // (question idx, language idx)

  switch (spec.kind) {
    case MixtureKind::Monolingual:
    case MixtureKind::Oracle:
    case MixtureKind::Parallel: {
      require_budget(spec.budget, L * Q,
                     spec.kind == MixtureKind::Parallel ? "every question in every language" : "every question");
      std::vector<std::pair<std::string, std::string>> empty;
      for (const auto& q : qids) {
        for (const auto& l : spec.languages) {
          if (!grid.has(q, l)) empty.emplace_back(q, l);
        }
      }
      if (!empty.empty()) throw_empty_cells(empty, std::string(to_string(spec.kind)) + " mixture");
      auto totals = language_totals(spec);
      for (std::size_t li = 0; li < L; ++li) {
        auto per_question = spread(totals[li], Q, mix_seed(spec.seed, "cells:" + spec.languages[li]));
        for (std::size_t qi = 0; qi < Q; ++qi) targets[{qi, li}] = per_question[qi];
      }
      break;
    }
    case MixtureKind::NonParallel: {
      if (Q < L) {
        throw InfeasibleError("nonparallel mixture needs at least one question per language (" +
                              std::to_string(Q) + " questions, " + std::to_string(L) + " languages)");
      }
      require_budget(spec.budget, Q, "every question");
      std::vector<std::pair<std::string, std::string>> blocking;
      std::vector<std::size_t> group_of;
      bool found = false;
      for (int attempt = 0; attempt < kPartitionAttempts && !found; ++attempt) {
        const std::uint64_t pseed = attempt == 0 ? spec.partition_seed : mix_seed(spec.partition_seed, attempt);
        std::vector<std::size_t> order(Q);
        std::iota(order.begin(), order.end(), 0);
        Rng rng(pseed);
        rng.shuffle(std::span(order));
        group_of.assign(Q, 0);
        std::size_t pos = 0;
        for (std::size_t g = 0; g < L; ++g) {
          std::size_t size = Q / L + (g < Q % L ? 1 : 0);
          for (std::size_t k = 0; k < size; ++k) group_of[order[pos++]] = g;
        }
        blocking.clear();
        for (std::size_t qi = 0; qi < Q; ++qi) {
          if (!grid.has(qids[qi], spec.languages[group_of[qi]])) {
            blocking.emplace_back(qids[qi], spec.languages[group_of[qi]]);
          }
        }
        if (blocking.empty()) {
          found = true;
          alloc.partition_seed = pseed;
        }
      }
      if (!found) {
        throw_empty_cells(blocking, "nonparallel mixture: no feasible partition in " +
                                        std::to_string(kPartitionAttempts) + " attempts; last attempt had");
      }
      // Group sizes and language totals both hand their extra unit to the
      // lowest group indices, so each total covers its group.
      std::vector<std::size_t> totals(L, spec.budget / L);
      for (std::size_t g = 0; g < spec.budget % L; ++g) ++totals[g];
      for (std::size_t g = 0; g < L; ++g) {
        std::vector<std::size_t> members;
        for (std::size_t qi = 0; qi < Q; ++qi) {
          if (group_of[qi] == g) members.push_back(qi);
        }
        auto per_question =
            spread(totals[g], members.size(), mix_seed(spec.seed, "cells:" + spec.languages[g]));
        for (std::size_t k = 0; k < members.size(); ++k) targets[{members[k], g}] = per_question[k];
      }
      break;
    }
  }

  for (const auto& [key, n] : targets) {
    if (n == 0) continue;
    alloc.cells.push_back({qids[key.first], spec.languages[key.second], n});
  }
  return alloc;
}

json to_json(const SftInstance& s) {
  return {{"instruction", s.instruction}, {"response", s.response},         {"language", s.language},
          {"question_id", s.question_id}, {"solution_hash", s.solution_hash}};
}

json to_json(const CellReport& c) {
  return {{"question_id", c.question_id},
          {"language", c.language},
          {"target", c.target},
          {"supply", c.supply},
          {"with_replacement", c.with_replacement}};
}

std::size_t SftMixture::question_coverage() const {
  std::set<std::string> q;
  for (const auto& i : instances) q.insert(i.question_id);
  return q.size();
}

std::string render_instruction(std::string_view statement, const std::string& language) {
  std::string long_name = language;
  for (const auto& l : translate::builtin_languages()) {
    if (l.short_name == language) long_name = l.long_name;
  }
  std::string_view tmpl = assets::sft_instruction();
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl.substr(i, 10) == "{language}") {
      out += long_name;
      i += 10;
    } else if (tmpl.substr(i, 11) == "{statement}") {
      out += statement;
      i += 11;
    } else {
      out.push_back(tmpl[i++]);
    }
  }
  return out;
}

SftMixture build_mixture(const BuildInputs& inputs, const MixtureSpec& spec) {
  CoverageGrid grid = CoverageGrid::of(inputs.corpus, inputs.question_ids);
  Allocation alloc = allocate_budget(spec, grid);

  SftMixture mixture;
  mixture.spec = spec;
  mixture.partition_seed = alloc.partition_seed;
  mixture.instances.reserve(spec.budget);
  for (const auto& cell : alloc.cells) {
    auto st = inputs.statements.find(cell.question_id);
    if (st == inputs.statements.end()) {
      throw ValidationError("no statement for question " + cell.question_id);
    }
    const auto& supply_cell = inputs.corpus.cell(cell.question_id, cell.language);
    // Sort by content hash so the draw does not depend on insertion order.
    std::vector<std::pair<std::string, const corpus::SolutionRecord*>> supply;
    supply.reserve(supply_cell.size());
    for (const auto& s : supply_cell) supply.emplace_back(code_hash(s.code), &s);
    std::sort(supply.begin(), supply.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : a.second->solution_id < b.second->solution_id;
    });

    CellReport report{cell.question_id, cell.language, cell.target, supply.size(), cell.target > supply.size()};
    Rng rng(mix_seed(spec.seed, "sample:" + cell.question_id + "\x1f" + cell.language));
    std::vector<std::size_t> picks(supply.size());
    std::iota(picks.begin(), picks.end(), 0);
    // Partial Fisher-Yates: the first min(target, supply) entries are a
    // uniform sample without replacement.
    const std::size_t distinct = std::min(cell.target, supply.size());
    for (std::size_t i = 0; i < distinct; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.below(supply.size() - i));
      std::swap(picks[i], picks[j]);
    }
    picks.resize(distinct);
    while (picks.size() < cell.target) picks.push_back(static_cast<std::size_t>(rng.below(supply.size())));

    const std::string instruction = render_instruction(st->second, cell.language);
    for (std::size_t p : picks) {
      const auto& [hash, rec] = supply[p];
      mixture.instances.push_back({instruction, rec->code, rec->language, rec->question_id, hash, rec->solution_id});
    }
    mixture.allocation.push_back(std::move(report));
  }
  return mixture;
}

SftMixture build_monolingual(const BuildInputs& inputs, const std::string& language, std::size_t budget,
                             std::uint64_t seed) {
  return build_mixture(inputs, {MixtureKind::Monolingual, {language}, budget, seed, 0});
}

SftMixture build_parallel(const BuildInputs& inputs, const std::vector<std::string>& languages,
                          std::size_t budget, std::uint64_t seed) {
  return build_mixture(inputs, {MixtureKind::Parallel, languages, budget, seed, 0});
}

SftMixture build_nonparallel(const BuildInputs& inputs, const std::vector<std::string>& languages,
                             std::size_t budget, std::uint64_t seed) {
  return build_mixture(inputs, {MixtureKind::NonParallel, languages, budget, seed, mix_seed(seed, "partition")});
}

SftMixture build_oracle(const BuildInputs& inputs, const std::string& target_language, std::size_t budget,
                        std::uint64_t seed) {
  return build_mixture(inputs, {MixtureKind::Oracle, {target_language}, budget, seed, 0});
}

MergedDataset merge_with_general(const SftMixture& coding, std::span<const std::string> general,
                                 std::uint64_t seed) {
  MergedDataset out;
  out.coding = coding.instances.size();
  out.general = general.size();
  std::vector<std::string> lines;
  lines.reserve(out.coding + out.general);
  for (const auto& g : general) lines.push_back(g);
  for (const auto& i : coding.instances) lines.push_back(to_jsonl_line(to_json(i)));
  Rng rng(mix_seed(seed, "merge"));
  rng.shuffle(std::span(lines));
  out.lines = std::move(lines);
  return out;
}

std::string composition_report(const MergedDataset& merged, const SftMixture& coding) {
  std::map<std::string, std::size_t> per_language;
  for (const auto& i : coding.instances) ++per_language[i.language];
  std::size_t thin = 0;
  for (const auto& c : coding.allocation) thin += c.with_replacement ? 1 : 0;
  std::ostringstream ss;
  ss << "mixture: " << to_string(coding.spec.kind) << "\n";
  ss << "budget: " << coding.spec.budget << "\n";
  ss << "seed: " << coding.spec.seed << "\n";
  ss << "total: " << merged.lines.size() << "\n";
  ss << "general: " << merged.general << "\n";
  ss << "coding: " << merged.coding << "\n";
  ss << "questions: " << coding.question_coverage() << "\n";
  for (const auto& [lang, n] : per_language) ss << "coding." << lang << ": " << n << "\n";
  ss << "cells_with_replacement: " << thin << "\n";
  return ss.str();
}

}  // namespace forge::mix
