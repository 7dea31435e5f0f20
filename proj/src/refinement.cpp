#include "mleng/refinement.hpp"

#include "mleng/robustness.hpp"
#include "util.hpp"

namespace mleng {

using nlohmann::json;

json RefineState::to_json() const {
    return {{"next_step", next_step},
            {"current", solution_to_json(current)},
            {"best", solution_to_json(best)},
            {"summaries", summaries},
            {"blocks", blocks}};
}

RefineState RefineState::from_json(const json& j) {
    RefineState s;
    s.next_step = j.at("next_step").get<int>();
    s.current = solution_from_json(j.at("current"));
    s.best = solution_from_json(j.at("best"));
    s.summaries = j.at("summaries").get<std::vector<std::string>>();
    s.blocks = j.at("blocks").get<std::vector<std::string>>();
    return s;
}

namespace {

std::string numbered_list(const std::vector<std::string>& items, const std::string& empty) {
    if (items.empty()) return empty;
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < items.size(); ++i)
        lines.push_back("[" + std::to_string(i + 1) + "]\n" + items[i]);
    return detail::join(lines, "\n\n");
}

std::string format_attempts(const std::vector<AttemptFeedback>& attempts) {
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < attempts.size(); ++i) {
        const auto& a = attempts[i];
        std::string line = "attempt " + std::to_string(i + 1) + ": plan: " + a.plan + "\n";
        if (a.score)
            line += "  -> score " + std::to_string(a.score->value);
        else
            line += "  -> failed: " + a.failure;
        lines.push_back(line);
    }
    return detail::join(lines, "\n");
}

} // namespace

AblationRecord run_ablation(RunContext& ctx, const Solution& s_t,
                            const std::vector<std::string>& history, int step) {
    if (ctx.ablation_overrides) {
        auto it = ctx.ablation_overrides->find(step);
        if (it != ctx.ablation_overrides->end()) {
            ctx.journal->note("ablation summary overridden by user", {{"step", step}});
            return AblationRecord{"", "", it->second};
        }
    }

    std::string response = ctx.gateway->invoke_role(
        AgentRole::Abl,
        {{"script", s_t.script},
         {"history", numbered_list(history, "(no prior ablation studies)")}});
    std::string study = extract_script(response);

    RepairResult rr = evaluate_with_repair(ctx, study, ScoreMode::NotRequired);
    if (!rr.ok) {
        ctx.journal->note("ablation study failed; continuing with sentinel summary",
                          {{"step", step}});
        return AblationRecord{rr.script, "", "ablation unavailable"};
    }

    std::string summary = detail::trim(ctx.gateway->invoke_role(
        AgentRole::Summarize, {{"script", rr.script}, {"output", rr.run_output}}));
    if (summary.empty()) summary = "(summarizer returned no usable text)";
    return AblationRecord{rr.script, rr.run_output, summary};
}

namespace {

struct ExtractorReport {
    std::string block;
    std::string plan;
};

ExtractorReport parse_extractor_report(const std::string& response) {
    json j;
    try {
        j = json::parse(detail::trim(response));
    } catch (const json::exception&) {
        try {
            j = json::parse(extract_script(response));
        } catch (const json::exception&) {
            throw MalformedStructuredOutput(
                "extractor response must be JSON with fields code_block and plan");
        }
    }
    if (!j.is_object() || !j.contains("code_block") || !j["code_block"].is_string() ||
        !j.contains("plan") || !j["plan"].is_string())
        throw MalformedStructuredOutput(
            "extractor response needs string fields code_block and plan");
    ExtractorReport report{j["code_block"].get<std::string>(), j["plan"].get<std::string>()};
    if (detail::trim(report.block).empty())
        throw MalformedStructuredOutput("extractor returned an empty code_block");
    if (detail::trim(report.plan).empty())
        throw MalformedStructuredOutput("extractor returned an empty plan");
    return report;
}

} // namespace

std::pair<CodeBlock, std::string> extract_target(RunContext& ctx, const std::string& summary,
                                                 const Solution& s_t,
                                                 const std::vector<std::string>& prior_blocks) {
    std::string prompt = ctx.gateway->render(
        AgentRole::Extractor,
        {{"summary", summary},
         {"script", s_t.script},
         {"prior_blocks", numbered_list(prior_blocks, "(none refined yet)")}});

    std::string violation;
    for (int attempt = 0; attempt < 2; ++attempt) {
        std::string current = prompt;
        if (attempt == 1)
            current += "\n\nThe code block you returned could not be used: " + violation +
                       "\nReturn a code block that appears exactly once, verbatim, in the "
                       "current solution.";
        ExtractorReport report = ctx.gateway->invoke_structured(AgentRole::Extractor, current,
                                                                parse_extractor_report);
        try {
            locate_block(s_t.script, report.block);
            return {CodeBlock{report.block}, report.plan};
        } catch (const Error& e) {
            violation = e.what();
        }
    }
    throw UnusableBlock("extractor failed twice to name a unique block: " + violation);
}

std::string propose_plan(RunContext& ctx, const CodeBlock& block,
                         const std::vector<AttemptFeedback>& attempts) {
    if (attempts.empty())
        throw InvalidArgument("propose_plan needs at least one prior attempt (the initial "
                              "plan comes from the extractor)");
    std::string prompt = ctx.gateway->render(
        AgentRole::Planner, {{"block", block.text}, {"attempts", format_attempts(attempts)}});
    std::string plan = detail::trim(ctx.gateway->invoke(AgentRole::Planner, prompt));

    auto duplicate = [&](const std::string& p) {
        for (const auto& a : attempts)
            if (a.plan == p) return true;
        return false;
    };
    if (duplicate(plan)) {
        std::string retry = prompt + "\n\nYou already proposed exactly that plan. Propose a "
                                     "different one.";
        plan = detail::trim(ctx.gateway->invoke(AgentRole::Planner, retry));
        if (duplicate(plan))
            ctx.journal->note("planner repeated a prior plan verbatim; accepting it");
    }
    return plan;
}

CodeBlock apply_plan(RunContext& ctx, const CodeBlock& block, const std::string& plan) {
    std::string response =
        ctx.gateway->invoke_role(AgentRole::Coder, {{"block", block.text}, {"plan", plan}});
    std::string refined = extract_script(response);
    if (detail::trim(refined).empty())
        throw EmptyBlock("coder returned an empty refinement for the block");
    return CodeBlock{refined};
}

namespace {

Solution run_refine_loop(RunContext& ctx, RefineState state) {
    if (!state.current.score || !state.best.score)
        throw UnscoredSolution("refine requires a scored starting solution");
    ScoreRecord h_best = *state.best.score;

    for (int t = state.next_step; t < ctx.cfg->outer_steps; ++t) {
        if (ctx.out_of_budget()) {
            ctx.journal->note("budget exhausted: refinement truncated", {{"step", t}});
            break;
        }
        ctx.check_halt();

        AblationRecord ablation = run_ablation(ctx, state.current, state.summaries, t);

        CodeBlock target;
        std::string initial_plan;
        bool step_usable = true;
        try {
            std::tie(target, initial_plan) =
                extract_target(ctx, ablation.summary, state.current, state.blocks);
        } catch (const UnusableBlock& e) {
            ctx.journal->note("outer step skipped: no usable target block",
                              {{"step", t}, {"reason", e.what()}});
            step_usable = false;
        }

        if (step_usable) {
            std::vector<AttemptFeedback> attempts;
            std::optional<Solution> step_best;

            for (int k = 0; k < ctx.cfg->inner_steps; ++k) {
                if (ctx.out_of_budget()) {
                    ctx.journal->note("budget exhausted: inner loop truncated",
                                      {{"step", t}, {"attempt", k}});
                    break;
                }
                ctx.check_halt();

                std::string plan =
                    k == 0 ? initial_plan : propose_plan(ctx, target, attempts);

                Solution candidate;
                try {
                    CodeBlock refined = apply_plan(ctx, target, plan);
                    Solution replaced = replace_block(state.current, target, refined);
                    candidate = make_solution(replaced.script, Origin::Refined,
                                              replaced.lineage);
                } catch (const Error& e) {
                    attempts.push_back({plan, std::nullopt, e.what()});
                    ctx.journal->decision("refine", "reject",
                                          {{"t", t}, {"k", k}, {"reason", e.what()}});
                    continue;
                }
                candidate = check_leakage(ctx, candidate);

                RepairResult rr = evaluate_with_repair(ctx, candidate.script, ScoreMode::Required);
                if (!rr.ok) {
                    attempts.push_back({plan, std::nullopt, "debug_failed"});
                    ctx.journal->decision("refine", "reject",
                                          {{"t", t}, {"k", k}, {"reason", "debug_failed"}});
                    continue;
                }

                Solution scored = make_solution(rr.script, Origin::Refined, candidate.lineage);
                scored.score = rr.score;
                attempts.push_back({plan, rr.score, ""});

                if (improves_or_ties(*rr.score, h_best)) {
                    state.best = scored;
                    h_best = *rr.score;
                    ctx.journal->decision("refine", "accept",
                                          {{"t", t},
                                           {"k", k},
                                           {"score", rr.score->value},
                                           {"solution_sha", short_hash(scored.script)}});
                } else {
                    ctx.journal->decision("refine", "reject",
                                          {{"t", t}, {"k", k}, {"score", rr.score->value}});
                }

                // Step winner: strictly-best-first, first wins ties.
                if (!step_best ||
                    compare_scores(*rr.score, *step_best->score) == Ordering::ABetter)
                    step_best = scored;
            }

            // The working solution advances only on strict improvement over s_t.
            bool advanced = false;
            if (step_best &&
                compare_scores(*step_best->score, *state.current.score) == Ordering::ABetter) {
                state.current = *step_best;
                advanced = true;
            }
            ctx.journal->decision("refine", "select",
                                  {{"t", t},
                                   {"advanced", advanced},
                                   {"solution_sha", short_hash(state.current.script)}});
            state.blocks.push_back(target.text);
        }

        state.summaries.push_back(ablation.summary);
        state.next_step = t + 1;
        ctx.checkpoint("outer-step:" + std::to_string(t + 1), state.to_json());
    }

    ctx.journal->decision("refine", "select",
                          {{"scope", "final"},
                           {"score", state.best.score->value},
                           {"solution_sha", short_hash(state.best.script)}});
    return state.best;
}

} // namespace

Solution refine(RunContext& ctx, const Solution& s0) {
    RefineState state;
    state.next_step = 0;
    state.current = s0;
    state.best = s0;
    return run_refine_loop(ctx, std::move(state));
}

Solution refine_from(RunContext& ctx, RefineState state) {
    return run_refine_loop(ctx, std::move(state));
}

} // namespace mleng
