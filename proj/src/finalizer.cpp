#include "mleng/finalizer.hpp"

#include <fstream>

#include <json.hpp>

#include "mleng/robustness.hpp"
#include "util.hpp"

namespace mleng {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct SubsampleReport {
    bool found = false;
    std::string block;
};

SubsampleReport parse_subsample_report(const std::string& response) {
    json j;
    try {
        j = json::parse(detail::trim(response));
    } catch (const json::exception&) {
        try {
            j = json::parse(extract_script(response));
        } catch (const json::exception&) {
            throw MalformedStructuredOutput(
                "subsampling report must be JSON with fields subsampling_found and code_block");
        }
    }
    if (!j.is_object() || !j.contains("subsampling_found") ||
        !j["subsampling_found"].is_boolean())
        throw MalformedStructuredOutput(
            "subsampling report needs boolean field subsampling_found");
    SubsampleReport report;
    report.found = j["subsampling_found"].get<bool>();
    if (j.contains("code_block") && j["code_block"].is_string())
        report.block = j["code_block"].get<std::string>();
    if (report.found && detail::trim(report.block).empty())
        throw MalformedStructuredOutput(
            "subsampling report claims a block but carries none");
    return report;
}

} // namespace

Solution remove_subsampling(RunContext& ctx, const Solution& winner) {
    std::string prompt =
        ctx.gateway->render(AgentRole::SubsampleExtractor, {{"script", winner.script}});
    SubsampleReport report = ctx.gateway->invoke_structured(AgentRole::SubsampleExtractor,
                                                            prompt, parse_subsample_report);
    if (!report.found) {
        ctx.journal->note("no subsampling detected in the winning solution");
        return winner;
    }

    std::string response =
        ctx.gateway->invoke_role(AgentRole::SubsampleRemover, {{"block", report.block}});
    std::string full_data_block = extract_script(response);

    try {
        if (detail::trim(full_data_block).empty())
            throw BlockNotFound("subsampling replacement is empty");
        Solution replaced =
            replace_block(winner, CodeBlock{report.block}, CodeBlock{full_data_block});
        Solution out = make_solution(replaced.script, Origin::Finalized, replaced.lineage);
        ctx.journal->note("subsampling removed",
                          {{"solution_sha", short_hash(out.script)}});
        return out;
    } catch (const Error& e) {
        ctx.journal->note("subsampling removal warning: block not applied",
                          {{"reason", e.what()}});
        return winner;
    }
}

namespace {

bool submission_ok(const fs::path& file) {
    std::error_code ec;
    return fs::is_regular_file(file, ec) && fs::file_size(file, ec) > 0;
}

} // namespace

SubmissionResult make_submission(RunContext& ctx, const Solution& winner) {
    if (!winner.score) throw UnscoredSolution("finalization requires a scored winner");

    fs::path final_dir = ctx.workspace->root() / "final";
    fs::create_directories(final_dir);
    std::string rel_submission = "final/" + ctx.task->submission_name;
    fs::path submission_file = ctx.workspace->root() / rel_submission;

    std::string response = ctx.gateway->invoke_role(AgentRole::Test,
                                                    {{"task", task_prompt_text(*ctx.task)},
                                                     {"script", winner.script},
                                                     {"submission_path", rel_submission}});
    std::string script = extract_script(response);
    if (detail::trim(script).empty())
        throw SubmissionMissing("test agent returned no submission script");

    Solution test_script = make_solution(script, Origin::Finalized, {winner.id});
    test_script = check_leakage(ctx, test_script);

    RepairResult rr = evaluate_with_repair(ctx, test_script.script, ScoreMode::NotRequired);
    if (!rr.ok)
        throw SubmissionMissing("submission script kept failing after " +
                                std::to_string(ctx.cfg->max_debug_rounds) +
                                " debug rounds: " + rr.last_bug.traceback);

    if (!submission_ok(submission_file)) {
        // Exactly one extra debugger round: a clean exit that wrote nothing
        // is still a bug.
        BugRecord bug{"script exited successfully but the expected submission file '" +
                          rel_submission + "' was not created or is empty",
                      rr.script};
        ctx.journal->note("submission file missing after clean exit; re-routing once "
                          "through the debugger");
        std::string repaired = extract_script(ctx.gateway->invoke_role(
            AgentRole::Debugger,
            {{"script", rr.script}, {"traceback", bug.traceback}}));
        if (detail::trim(repaired).empty()) repaired = rr.script;
        EvalOutcome retry = evaluate(ctx, repaired, ScoreMode::NotRequired);
        if (!retry.ok() || !submission_ok(submission_file))
            throw SubmissionMissing("no submission file at " + submission_file.string());
        rr.script = repaired;
    }

    SubmissionResult result;
    result.script = make_solution(rr.script, Origin::Finalized, {winner.id});
    result.submission_path = submission_file;
    result.solution_path = final_dir / ("solution." + ctx.task->script_ext);
    std::ofstream out(result.solution_path, std::ios::binary | std::ios::trunc);
    out << rr.script;
    if (!rr.script.empty() && rr.script.back() != '\n') out << '\n';
    out.close();

    // journal paths are run-dir-relative so journals stay location-independent
    ctx.journal->note("submission ready",
                      {{"submission", rel_submission},
                       {"solution", "final/solution." + ctx.task->script_ext},
                       {"script_sha", short_hash(rr.script)}});
    return result;
}

} // namespace mleng
