#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mleng/errors.hpp"

namespace mleng {

enum class Direction { Maximize, Minimize };

const char* to_string(Direction d);
Direction direction_from_string(const std::string& s);

// A parsed metric value together with the sense in which it is compared.
// Values are always finite; the parse layer rejects NaN/inf before a
// ScoreRecord can exist.
struct ScoreRecord {
    double value = 0.0;
    Direction direction = Direction::Maximize;
};

enum class Ordering { ABetter, BBetter, Equal };

enum class Origin { Candidate, Merged, Refined, Ensembled, Finalized };

const char* to_string(Origin o);
Origin origin_from_string(const std::string& s);

// One element of the search space: a full runnable script plus provenance.
// Ids are content-addressed over (script, origin, lineage), so lineage forms
// a DAG by construction.
struct Solution {
    std::string script;
    Origin origin = Origin::Candidate;
    std::vector<std::string> lineage;
    std::optional<ScoreRecord> score;
    std::string id;
};

Solution make_solution(std::string script, Origin origin,
                       std::vector<std::string> lineage = {});

// A contiguous span of a solution's script. When bound to a solution it must
// occur exactly once in that script.
struct CodeBlock {
    std::string text;
};

// Search-budget knobs. Counts follow the common setup: four candidate
// models, four outer and four inner refinement steps, two parallel
// solutions, five ensemble rounds, and a 24h overall budget.
struct RunConfig {
    int num_candidates = 4;     // M
    int outer_steps = 4;        // T
    int inner_steps = 4;        // K
    int parallel_solutions = 2; // L
    int ensemble_rounds = 5;    // R
    int max_debug_rounds = 3;
    std::chrono::seconds per_exec_timeout{3600};
    std::chrono::seconds total_budget{24 * 3600};
    std::int64_t seed = 0;

    // Throws ConfigError when a count is out of range or the per-execution
    // timeout exceeds the total budget.
    void validate() const;
};

// --- score comparison ------------------------------------------------------

// Direction-aware strict dominance. Throws DirectionMismatch when the two
// records disagree on direction.
Ordering compare_scores(const ScoreRecord& a, const ScoreRecord& b);

// Tie-accepting acceptance test: true iff candidate is at least as good as
// the incumbent under their shared direction.
bool improves_or_ties(const ScoreRecord& candidate, const ScoreRecord& incumbent);

// Best-first index permutation over scored solutions; stable for ties.
// Throws UnscoredSolution if any input lacks a score, DirectionMismatch on
// mixed directions.
std::vector<std::size_t> sort_candidates(const std::vector<Solution>& solutions);

// --- block replacement -----------------------------------------------------

struct BlockSpan {
    std::size_t offset = 0;
    std::size_t length = 0;
};

// Finds the unique span of `block` inside `script`. Exact match first; if
// that finds nothing, retries with whitespace-normalized matching (line
// endings unified, runs of spaces/tabs collapsed, trailing whitespace
// ignored) and maps the hit back to the original byte span.
// Throws BlockNotFound (zero occurrences under both matchers) or
// AmbiguousBlock (two or more).
BlockSpan locate_block(const std::string& script, const std::string& block);

// Returns a new solution whose script equals s.script with the single
// occurrence of `old` substituted by `replacement`; lineage records s.
Solution replace_block(const Solution& s, const CodeBlock& old,
                       const CodeBlock& replacement);

// --- hashing ---------------------------------------------------------------

// FNV-1a over the full text; used for leakage-check dedup and journal refs.
std::uint64_t content_hash(const std::string& text);
std::string short_hash(const std::string& text);

} // namespace mleng
