#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "forge/corpus.hpp"

namespace forge::mix {

enum class MixtureKind {
  Monolingual,  // one language, every question
  Parallel,     // every question in every language
  NonParallel,  // each question in exactly one language
  Oracle,       // monolingual in the downstream target language
};

std::string_view to_string(MixtureKind kind);
MixtureKind mixture_kind(std::string_view name);

struct MixtureSpec {
  MixtureKind kind = MixtureKind::Parallel;
  std::vector<std::string> languages;  // exactly one for Monolingual/Oracle
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  /// Seed of the question-to-language partition (NonParallel only).
  std::uint64_t partition_seed = 0;
};

void validate(const MixtureSpec& spec);

/// Which (question, language) cells have at least one verified solution.
struct CoverageGrid {
  std::vector<std::string> question_ids;
  std::set<std::pair<std::string, std::string>> nonempty;

  bool has(const std::string& question_id, const std::string& language) const {
    return nonempty.count({question_id, language}) != 0;
  }
  static CoverageGrid of(const corpus::ParallelCorpus& corpus,
                         std::vector<std::string> question_ids = {});
};

struct CellTarget {
  std::string question_id;
  std::string language;
  std::size_t target = 0;
};

struct Allocation {
  /// Ordered by question (grid order), then language (spec order). Only
  /// cells with a positive target appear.
  std::vector<CellTarget> cells;
  /// Partition seed that produced a feasible split (NonParallel), else the
  /// spec's partition seed.
  std::uint64_t partition_seed = 0;
};

/// Maximum number of derived partition seeds tried for NonParallel.
inline constexpr int kPartitionAttempts = 64;

/// Splits the budget into per-cell targets summing to exactly spec.budget.
///
/// The budget is first divided across languages, floor(B/L) each with the
/// remainder going one-each to languages in seeded order, so per-language
/// totals differ by at most one. Each language total is then divided across
/// its questions the same way: floor(T/Q) per question plus one for the
/// first T mod Q questions of a seeded shuffle.
///
/// NonParallel first partitions a seeded shuffle of the questions into L
/// groups of floor(Q/L) (one more for the first Q mod L groups); group g
/// takes languages[g]. If any assigned cell is empty, derived seeds are
/// retried up to kPartitionAttempts times.
///
/// Throws InfeasibleError when a kind cannot give every question at least
/// one instance (B < L*Q for Parallel, B < Q otherwise, Q < L for
/// NonParallel) or when required cells are empty.
Allocation allocate_budget(const MixtureSpec& spec, const CoverageGrid& grid);

struct SftInstance {
  std::string instruction;
  std::string response;
  std::string language;
  std::string question_id;
  std::string solution_hash;
  std::string solution_id;
};

json to_json(const SftInstance& instance);

struct CellReport {
  std::string question_id;
  std::string language;
  std::size_t target = 0;
  std::size_t supply = 0;
  /// Supply was smaller than the target, so solutions repeat.
  bool with_replacement = false;
};

json to_json(const CellReport& cell);

struct SftMixture {
  MixtureSpec spec;
  std::vector<SftInstance> instances;
  std::vector<CellReport> allocation;
  std::uint64_t partition_seed = 0;

  std::size_t question_coverage() const;
};

/// The SFT instruction for a question in a language, from
/// assets/sft_instruction.txt.
std::string render_instruction(std::string_view statement, const std::string& language);

struct BuildInputs {
  const corpus::ParallelCorpus& corpus;
  /// question_id -> statement.
  const std::map<std::string, std::string>& statements;
  /// Questions the mixture must cover; empty means every corpus question.
  std::vector<std::string> question_ids = {};
};

/// Allocates, then samples each cell uniformly without replacement, falling
/// back to with-replacement draws only when a cell's supply is below its
/// target (reported in the allocation).
SftMixture build_mixture(const BuildInputs& inputs, const MixtureSpec& spec);

SftMixture build_monolingual(const BuildInputs& inputs, const std::string& language, std::size_t budget,
                             std::uint64_t seed);
SftMixture build_parallel(const BuildInputs& inputs, const std::vector<std::string>& languages,
                          std::size_t budget, std::uint64_t seed);
SftMixture build_nonparallel(const BuildInputs& inputs, const std::vector<std::string>& languages,
                             std::size_t budget, std::uint64_t seed);
SftMixture build_oracle(const BuildInputs& inputs, const std::string& target_language, std::size_t budget,
                        std::uint64_t seed);

struct MergedDataset {
  /// Serialized records; general records are passed through byte-for-byte.
  std::vector<std::string> lines;
  std::size_t coding = 0;
  std::size_t general = 0;
};

/// Concatenates the coding mixture with opaque general-purpose records and
/// applies a seeded shuffle.
MergedDataset merge_with_general(const SftMixture& coding, std::span<const std::string> general,
                                 std::uint64_t seed);

/// Human-readable composition summary.
std::string composition_report(const MergedDataset& merged, const SftMixture& coding);

}  // namespace forge::mix
