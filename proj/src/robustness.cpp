#include "mleng/robustness.hpp"

#include <json.hpp>

#include "util.hpp"

namespace mleng {

using nlohmann::json;

EvalOutcome evaluate(RunContext& ctx, const std::string& script, ScoreMode mode) {
    EvalOutcome out;
    std::string sha = short_hash(script);

    if (ctx.journal->replaying() && ctx.journal->replay_peek_type() == "execution") {
        Event rec = ctx.journal->replay_execution(sha);
        out.exec_id = rec.data.at("exec_id").get<int>();
        out.exec = ctx.engine->replay_script(script, *ctx.workspace, rec,
                                             ctx.cfg->per_exec_timeout);
    } else {
        out.exec_id = ctx.workspace->alloc_exec_id();
        out.exec = ctx.engine->run_script(script, *ctx.workspace, out.exec_id,
                                          ctx.cfg->per_exec_timeout);
        ctx.journal->execution(out.exec_id, sha, out.exec.exit_status, out.exec.timed_out,
                               static_cast<long>(out.exec.duration.count()));
    }

    if (out.exec.timed_out) {
        out.bug = BugRecord{"process killed after exceeding the " +
                                std::to_string(ctx.cfg->per_exec_timeout.count()) +
                                "s execution timeout",
                            script};
        return out;
    }
    if (out.exec.exit_status != 0) {
        std::string traceback = out.exec.stderr_text.empty()
                                    ? "process exited with status " +
                                          std::to_string(out.exec.exit_status)
                                    : out.exec.stderr_text;
        out.bug = BugRecord{traceback, script};
        return out;
    }
    if (mode == ScoreMode::NotRequired) return out;

    try {
        ScoreRecord score = parse_score(out.exec.stdout_text, ctx.task->direction);
        out.score = score;
        ctx.journal->score(out.exec_id, score.value, score.direction);
    } catch (const MissingScore&) {
        out.bug = BugRecord{std::string("script completed without printing the required "
                                        "score line '") +
                                kScoreMarker + "<number>'",
                            script};
    } catch (const NonFiniteScore& e) {
        out.bug = BugRecord{e.what(), script};
    }
    return out;
}

namespace {

RepairResult from_outcome(const std::string& script, const EvalOutcome& outcome) {
    RepairResult r;
    r.script = script;
    r.evaluations = 1;
    if (outcome.ok()) {
        r.ok = true;
        r.score = outcome.score;
        r.run_output = outcome.exec.stdout_text;
    } else {
        r.last_bug = *outcome.bug;
    }
    return r;
}

} // namespace

RepairResult debug_loop(RunContext& ctx, const std::string& script, const BugRecord& bug,
                        ScoreMode mode) {
    RepairResult r;
    r.script = script;
    r.last_bug = bug;
    std::string current = script;
    BugRecord current_bug = bug;

    for (int round = 1; round <= ctx.cfg->max_debug_rounds; ++round) {
        std::string response = ctx.gateway->invoke_role(
            AgentRole::Debugger, {{"script", current}, {"traceback", current_bug.traceback}});
        std::string repaired = extract_script(response);
        if (detail::trim(repaired).empty()) repaired = current;

        EvalOutcome outcome = evaluate(ctx, repaired, mode);
        ++r.evaluations;
        r.debug_rounds = round;
        current = repaired;
        r.script = repaired;
        if (outcome.ok()) {
            r.ok = true;
            r.score = outcome.score;
            r.run_output = outcome.exec.stdout_text;
            return r;
        }
        current_bug = *outcome.bug;
        r.last_bug = current_bug;
    }
    ctx.journal->note("debug budget exhausted",
                      {{"rounds", ctx.cfg->max_debug_rounds},
                       {"script_sha", short_hash(current)}});
    return r;
}

RepairResult evaluate_with_repair(RunContext& ctx, const std::string& script,
                                  ScoreMode mode) {
    EvalOutcome first = evaluate(ctx, script, mode);
    RepairResult r = from_outcome(script, first);
    if (r.ok) return r;

    RepairResult repaired = debug_loop(ctx, script, *first.bug, mode);
    repaired.evaluations += 1; // include the caller's original evaluation
    return repaired;
}

namespace {

struct LeakageReport {
    bool flagged = false;
    std::string block;
};

LeakageReport parse_leakage_report(const std::string& response) {
    json j;
    try {
        j = json::parse(detail::trim(response));
    } catch (const json::exception&) {
        try {
            j = json::parse(extract_script(response));
        } catch (const json::exception&) {
            throw MalformedStructuredOutput(
                "leakage report must be JSON with fields leakage_detected and code_block");
        }
    }
    if (!j.is_object() || !j.contains("leakage_detected") || !j["leakage_detected"].is_boolean())
        throw MalformedStructuredOutput("leakage report needs boolean field leakage_detected");
    LeakageReport report;
    report.flagged = j["leakage_detected"].get<bool>();
    if (j.contains("code_block") && j["code_block"].is_string())
        report.block = j["code_block"].get<std::string>();
    if (report.flagged && detail::trim(report.block).empty())
        throw MalformedStructuredOutput(
            "leakage report flags leakage but carries no code_block");
    return report;
}

} // namespace

Solution check_leakage(RunContext& ctx, const Solution& solution) {
    std::uint64_t key = content_hash(solution.script);
    std::string sha = short_hash(solution.script);

    if (auto cached = ctx.leakage_cache->lookup(key)) {
        ctx.journal->note("leakage-check cache hit", {{"script_sha", sha}});
        if (*cached == solution.script) return solution;
        Solution out = make_solution(*cached, solution.origin, {solution.id});
        return out;
    }

    std::string prompt = ctx.gateway->render(AgentRole::Leakage, {{"script", solution.script}});
    LeakageReport report =
        ctx.gateway->invoke_structured(AgentRole::Leakage, prompt, parse_leakage_report);

    if (!report.flagged) {
        ctx.leakage_cache->store(key, solution.script);
        ctx.journal->note("leakage-check clean", {{"script_sha", sha}});
        return solution;
    }

    std::string fix_prompt =
        render_prompt(ctx.gateway->templates().leakage_fix(), {{"block", report.block}});
    std::string corrected = extract_script(ctx.gateway->invoke(AgentRole::Leakage, fix_prompt));

    try {
        if (detail::trim(corrected).empty())
            throw BlockNotFound("corrected block is empty");
        Solution out = replace_block(solution, CodeBlock{report.block}, CodeBlock{corrected});
        ctx.leakage_cache->store(key, out.script);
        ctx.journal->note("leakage-check corrected",
                          {{"script_sha", sha}, {"result_sha", short_hash(out.script)}});
        return out;
    } catch (const Error& e) {
        // Fail open: an unusable checker answer must not sink a long run.
        ctx.leakage_cache->store(key, solution.script);
        ctx.journal->note("leakage-check warning: correction not applied",
                          {{"script_sha", sha}, {"reason", e.what()}});
        return solution;
    }
}

Solution check_data_usage(RunContext& ctx, const Solution& s0) {
    std::string files = list_data_files(ctx.task->data_root);
    if (files.empty()) {
        ctx.journal->note("data-usage check skipped: no files under data root");
        return s0;
    }
    std::string response = ctx.gateway->invoke_role(AgentRole::DataUsage,
                                                    {{"task", task_prompt_text(*ctx.task)},
                                                     {"script", s0.script},
                                                     {"files", files}});
    std::string revised = extract_script(response);
    if (detail::trim(revised).empty() || revised == s0.script) {
        ctx.journal->note("data-usage check: solution unchanged");
        return s0;
    }
    ctx.journal->note("data-usage check revised the initial solution",
                      {{"script_sha", short_hash(revised)}});
    Solution out = make_solution(revised, s0.origin, {s0.id});
    return out;
}

} // namespace mleng
