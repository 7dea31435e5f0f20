#pragma once

#include <optional>
#include <string>

#include "mleng/context.hpp"
#include "mleng/executor.hpp"

namespace mleng {

// Whether a successful run must print the score marker. Ablation and
// submission scripts report through other channels, so a missing marker is
// not a bug for them.
enum class ScoreMode { Required, NotRequired };

struct EvalOutcome {
    int exec_id = -1;
    ExecutionResult exec;
    std::optional<ScoreRecord> score;
    std::optional<BugRecord> bug;

    bool ok() const { return !bug.has_value(); }
};

// Runs one script in a fresh exec dir and journals the execution (and the
// score, when one is required and present). Crashes, timeouts, a missing
// marker (Required mode) and non-finite marker values all come back as
// BugRecords with a traceback-style message; evaluate never returns a
// non-finite score.
EvalOutcome evaluate(RunContext& ctx, const std::string& script, ScoreMode mode);

struct RepairResult {
    bool ok = false;
    std::string script;     // last attempted script (repaired on success)
    std::optional<ScoreRecord> score;
    std::string run_output; // stdout of the successful run
    BugRecord last_bug;     // set when !ok
    int evaluations = 0;
    int debug_rounds = 0;
};

// Bounded repair cycle: feed the failing script and its traceback to the
// debugger role, re-evaluate, repeat up to cfg.max_debug_rounds times.
// The evaluation that produced `bug` is the caller's; this adds at most
// max_debug_rounds evaluations and as many debugger calls. A failure is a
// value, not a fault.
RepairResult debug_loop(RunContext& ctx, const std::string& script, const BugRecord& bug,
                        ScoreMode mode);

// evaluate + debug_loop: at most max_debug_rounds + 1 evaluations total.
RepairResult evaluate_with_repair(RunContext& ctx, const std::string& script,
                                  ScoreMode mode);

// Two-step leakage pass: extract the data-preprocessing block, and when the
// checker flags it, splice in the corrected block. Anything that prevents
// the splice (unmatchable block, empty correction) fails open: the input
// comes back unmodified with a journal warning. Results are cached by
// content hash so identical scripts are checked once.
Solution check_leakage(RunContext& ctx, const Solution& solution);

// Asks the data-usage role to revise the initial solution against the list
// of provided files. Returns the (possibly revised) solution; the caller
// re-evaluates a revision. An empty data listing short-circuits.
Solution check_data_usage(RunContext& ctx, const Solution& s0);

} // namespace mleng
