#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mleng/context.hpp"
#include "mleng/core.hpp"

namespace mleng {

// One ablation pass: the generated study script, its raw run output, and
// the distilled summary fed to the extractor.
struct AblationRecord {
    std::string script;
    std::string raw_output;
    std::string summary;
};

// Feedback line for the planner: a prior plan and how it went.
struct AttemptFeedback {
    std::string plan;
    std::optional<ScoreRecord> score; // empty when the attempt was discarded
    std::string failure;              // short reason when discarded
};

// Loop-carried refinement state; serialized into step checkpoints so a
// resumed run re-enters exactly where it left off.
struct RefineState {
    int next_step = 0;
    Solution current; // s_t
    Solution best;    // s_final
    std::vector<std::string> summaries;
    std::vector<std::string> blocks;

    nlohmann::json to_json() const;
    static RefineState from_json(const nlohmann::json& j);
};

// Generates and executes an ablation study over s_t (no score marker
// required), then summarizes it. A study that cannot be made to run within
// the debug budget yields the sentinel summary "ablation unavailable" and
// the pipeline continues. A configured override for this step bypasses the
// whole pass.
AblationRecord run_ablation(RunContext& ctx, const Solution& s_t,
                            const std::vector<std::string>& history, int step);

// Asks the extractor for the most impactful block plus the initial plan.
// The block must occur exactly once in s_t; one re-prompt with the
// violation message is allowed, then UnusableBlock.
std::pair<CodeBlock, std::string> extract_target(RunContext& ctx,
                                                 const std::string& summary,
                                                 const Solution& s_t,
                                                 const std::vector<std::string>& prior_blocks);

// Next plan from the attempt history of the current outer step. Retries
// once when the planner repeats a prior plan verbatim, then accepts it with
// a journal warning.
std::string propose_plan(RunContext& ctx, const CodeBlock& block,
                         const std::vector<AttemptFeedback>& attempts);

// Implements a plan on the block. Throws EmptyBlock when the coder returns
// nothing usable.
CodeBlock apply_plan(RunContext& ctx, const CodeBlock& block, const std::string& plan);

// T outer steps of ablation-driven targeting, K inner plan attempts each.
// The global best (s_final) advances on ties; the working solution s_{t+1}
// advances only on strict improvement. Returns s_final, never worse than
// s_0.
Solution refine(RunContext& ctx, const Solution& s0);

// Resume entry: continue from a checkpointed state.
Solution refine_from(RunContext& ctx, RefineState state);

} // namespace mleng
