#pragma once

#include <filesystem>
#include <string>

#include "mleng/context.hpp"
#include "mleng/core.hpp"

namespace mleng {

// Strips the train-on-a-subset shortcut from the winning solution so the
// deliverable trains on all provided samples. If the extractor reports no
// subsampling (or its block cannot be matched), the input comes back
// byte-identical.
Solution remove_subsampling(RunContext& ctx, const Solution& winner);

struct SubmissionResult {
    Solution script;                       // the submission-producing script
    std::filesystem::path solution_path;   // <run>/final/solution.<ext>
    std::filesystem::path submission_path; // <run>/final/<submission_name>
};

// Turns the winner into a submission-producing script, executes it with the
// debug loop, and verifies the submission file exists and is non-empty. A
// clean exit without the file is routed once more through the debugger;
// beyond that, SubmissionMissing.
SubmissionResult make_submission(RunContext& ctx, const Solution& winner);

} // namespace mleng
