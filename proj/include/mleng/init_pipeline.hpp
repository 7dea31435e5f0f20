#pragma once

#include <optional>
#include <vector>

#include "mleng/context.hpp"
#include "mleng/gateway.hpp"

namespace mleng {

// Exactly M model cards: user-injected cards first, the remainder retrieved
// through the retriever role and parsed as structured output.
std::vector<ModelCard> retrieve_models(RunContext& ctx, int num_candidates,
                                       const std::vector<ModelCard>& injected);

// Generates, leakage-checks, and evaluates one candidate solution for a
// card. A candidate whose repairs run out of budget is discarded (nullopt).
std::optional<Solution> build_candidate(RunContext& ctx, const ModelCard& card,
                                        int card_index);

// Best-first sequential merging: start from the top-scoring candidate and
// fold the rest in while the merged score does not degrade. Stops at the
// first rejection or unrepairable merge. Journals one accept/reject
// decision per merge attempt and a stop decision on early exit.
Solution merge_candidates(RunContext& ctx, const std::vector<Solution>& scored);

// The full initialization pass: retrieve -> build -> sort/merge ->
// data-usage check (re-evaluating a revision). Throws AllCandidatesFailed
// when no candidate survives.
Solution generate_initial_solution(RunContext& ctx,
                                   const std::vector<ModelCard>& injected = {});

} // namespace mleng
