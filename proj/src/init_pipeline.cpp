#include "mleng/init_pipeline.hpp"

#include "mleng/robustness.hpp"
#include "util.hpp"

namespace mleng {

using nlohmann::json;

std::vector<ModelCard> retrieve_models(RunContext& ctx, int num_candidates,
                                       const std::vector<ModelCard>& injected) {
    if (num_candidates < 1) throw InvalidArgument("num_candidates must be >= 1");
    for (const auto& card : injected)
        if (card.model_description.empty() || card.example_code.empty())
            throw InvalidArgument("injected model cards must have non-empty fields");

    std::vector<ModelCard> cards;
    for (const auto& card : injected) {
        if (static_cast<int>(cards.size()) == num_candidates) break;
        cards.push_back(card);
    }
    if (!cards.empty())
        ctx.journal->note("user-injected model cards",
                          {{"count", cards.size()}});

    int need = num_candidates - static_cast<int>(cards.size());
    if (need > 0) {
        std::string prompt = ctx.gateway->render(
            AgentRole::Retriever,
            {{"task", task_prompt_text(*ctx.task)}, {"count", std::to_string(need)}});
        auto retrieved = ctx.gateway->invoke_structured(
            AgentRole::Retriever, prompt,
            [need](const std::string& response) { return parse_model_cards(response, need); });
        cards.insert(cards.end(), retrieved.begin(), retrieved.end());
    }
    return cards;
}

std::optional<Solution> build_candidate(RunContext& ctx, const ModelCard& card,
                                        int card_index) {
    std::string response = ctx.gateway->invoke_role(AgentRole::Init,
                                                    {{"task", task_prompt_text(*ctx.task)},
                                                     {"model_description", card.model_description},
                                                     {"example_code", card.example_code}});
    std::string script = extract_script(response);
    if (detail::trim(script).empty()) {
        ctx.journal->decision("init", "reject",
                              {{"candidate", card_index}, {"reason", "empty script"}});
        return std::nullopt;
    }

    Solution candidate = make_solution(script, Origin::Candidate);
    candidate = check_leakage(ctx, candidate);

    RepairResult rr = evaluate_with_repair(ctx, candidate.script, ScoreMode::Required);
    if (!rr.ok) {
        ctx.journal->decision("init", "reject",
                              {{"candidate", card_index}, {"reason", "debug_failed"}});
        return std::nullopt;
    }
    Solution scored = make_solution(rr.script, Origin::Candidate, candidate.lineage);
    scored.score = rr.score;
    ctx.journal->note("candidate ready", {{"candidate", card_index},
                                          {"score", rr.score->value},
                                          {"solution_sha", short_hash(scored.script)}});
    return scored;
}

Solution merge_candidates(RunContext& ctx, const std::vector<Solution>& scored) {
    if (scored.empty()) throw InvalidArgument("merge_candidates needs at least one solution");

    std::vector<std::size_t> order = sort_candidates(scored);
    Solution best = scored[order[0]];
    ScoreRecord h_best = *best.score;
    ctx.journal->note("merge base",
                      {{"solution_sha", short_hash(best.script)}, {"score", h_best.value}});

    for (std::size_t rank = 1; rank < order.size(); ++rank) {
        if (ctx.out_of_budget()) {
            ctx.journal->note("budget exhausted: merging truncated", {{"stage", "merge"}});
            break;
        }
        ctx.check_halt();

        const Solution& reference = scored[order[rank]];
        std::string response = ctx.gateway->invoke_role(
            AgentRole::Merger, {{"task", task_prompt_text(*ctx.task)},
                                {"base_script", best.script},
                                {"reference_script", reference.script}});
        Solution merged = make_solution(extract_script(response), Origin::Merged,
                                        {best.id, reference.id});
        merged = check_leakage(ctx, merged);

        RepairResult rr = evaluate_with_repair(ctx, merged.script, ScoreMode::Required);
        int k = static_cast<int>(rank) + 1; // 1-based rank of the merged-in candidate
        if (!rr.ok) {
            ctx.journal->decision("merge", "reject",
                                  {{"k", k}, {"reason", "debug_failed"}});
            ctx.journal->decision("merge", "stop", {{"reason", "debug_failed"}});
            break;
        }
        if (improves_or_ties(*rr.score, h_best)) {
            best = make_solution(rr.script, Origin::Merged, merged.lineage);
            best.score = rr.score;
            h_best = *rr.score;
            ctx.journal->decision("merge", "accept",
                                  {{"k", k},
                                   {"score", rr.score->value},
                                   {"solution_sha", short_hash(best.script)}});
        } else {
            ctx.journal->decision("merge", "reject", {{"k", k}, {"score", rr.score->value}});
            ctx.journal->decision("merge", "stop", {{"reason", "rejection"}});
            break;
        }
    }
    return best;
}

Solution generate_initial_solution(RunContext& ctx, const std::vector<ModelCard>& injected) {
    std::vector<ModelCard> cards = retrieve_models(ctx, ctx.cfg->num_candidates, injected);

    // Builds run in retrieval order; sorting decouples merge order from it.
    std::vector<Solution> candidates;
    for (std::size_t i = 0; i < cards.size(); ++i) {
        if (ctx.out_of_budget()) {
            ctx.journal->note("budget exhausted: candidate builds truncated",
                              {{"built", candidates.size()}});
            break;
        }
        ctx.check_halt();
        if (auto candidate = build_candidate(ctx, cards[i], static_cast<int>(i) + 1))
            candidates.push_back(std::move(*candidate));
    }
    if (candidates.empty())
        throw AllCandidatesFailed("every one of the " + std::to_string(cards.size()) +
                                  " candidate solutions failed to build");

    Solution s0 = merge_candidates(ctx, candidates);

    Solution revised = check_data_usage(ctx, s0);
    if (revised.script != s0.script) {
        Solution checked = check_leakage(ctx, revised);
        RepairResult rr = evaluate_with_repair(ctx, checked.script, ScoreMode::Required);
        if (rr.ok) {
            s0 = make_solution(rr.script, s0.origin, checked.lineage);
            s0.score = rr.score;
        } else {
            ctx.journal->note("data-usage revision failed to run; keeping merged solution",
                              {{"reason", rr.last_bug.traceback}});
        }
    }
    return s0;
}

} // namespace mleng
