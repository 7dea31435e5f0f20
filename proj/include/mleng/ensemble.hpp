#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mleng/context.hpp"
#include "mleng/core.hpp"

namespace mleng {

// One attempted ensemble round in the feedback history.
struct EnsembleFeedback {
    std::string plan;
    std::optional<ScoreRecord> score; // empty when the round was discarded
    std::string failure;              // short reason when discarded
};

// Loop-carried ensemble state; serialized into round checkpoints.
struct EnsembleState {
    int next_round = 1; // 1-based
    std::vector<EnsembleFeedback> history;
    std::optional<Solution> best;
    int best_round = 0;

    nlohmann::json to_json() const;
    static EnsembleState from_json(const nlohmann::json& j);
};

// Next ensemble plan from the round history. With an empty history the
// rendered prompt asks for a simple initial strategy (averaging the final
// predictions). Requires at least two solutions, checked before any
// provider call.
std::string propose_ensemble_plan(RunContext& ctx, const std::vector<Solution>& solutions,
                                  const std::vector<EnsembleFeedback>& history);

// Implements a plan over all input scripts; the result is leakage-checked.
// Throws EmptyScript when the ensembler returns nothing usable.
Solution implement_ensemble(RunContext& ctx, const std::string& plan,
                            const std::vector<Solution>& solutions);

// R rounds of propose -> implement -> evaluate. Returns the first argmax
// round's solution; when every round is discarded, falls back to the best
// input solution. Exactly R plans are proposed regardless of discards.
Solution ensemble(RunContext& ctx, const std::vector<Solution>& solutions);

// Resume entry: continue from a checkpointed round state.
Solution ensemble_from(RunContext& ctx, const std::vector<Solution>& solutions,
                       EnsembleState state);

// First-wins argmax over (index, score) pairs; shared by the round
// selection and the fallback over inputs. Exposed for direct testing.
std::size_t argmax_first_wins(const std::vector<ScoreRecord>& scores);

} // namespace mleng
