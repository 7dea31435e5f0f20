#include "mleng/ensemble.hpp"

#include "mleng/robustness.hpp"
#include "util.hpp"

namespace mleng {

using nlohmann::json;

json EnsembleState::to_json() const {
    json hist = json::array();
    for (const auto& h : history) {
        json item = {{"plan", h.plan}, {"failure", h.failure}};
        if (h.score) {
            item["score"] = h.score->value;
            item["direction"] = to_string(h.score->direction);
        }
        hist.push_back(item);
    }
    json j = {{"next_round", next_round}, {"history", hist}, {"best_round", best_round}};
    if (best) j["best"] = solution_to_json(*best);
    return j;
}

EnsembleState EnsembleState::from_json(const json& j) {
    EnsembleState s;
    s.next_round = j.at("next_round").get<int>();
    s.best_round = j.at("best_round").get<int>();
    if (j.contains("best")) s.best = solution_from_json(j["best"]);
    for (const auto& item : j.at("history")) {
        EnsembleFeedback f;
        f.plan = item.at("plan").get<std::string>();
        f.failure = item.at("failure").get<std::string>();
        if (item.contains("score"))
            f.score = ScoreRecord{
                item["score"].get<double>(),
                direction_from_string(item.at("direction").get<std::string>())};
        s.history.push_back(std::move(f));
    }
    return s;
}

std::size_t argmax_first_wins(const std::vector<ScoreRecord>& scores) {
    if (scores.empty()) throw InvalidArgument("argmax over an empty score list");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (compare_scores(scores[i], scores[best]) == Ordering::ABetter) best = i;
    return best;
}

namespace {

constexpr const char* kInitialPlanInstruction =
    "No ensemble strategies have been attempted yet. Propose a simple initial strategy, "
    "such as averaging the final predictions of the solutions.";

std::string format_history(const std::vector<EnsembleFeedback>& history) {
    if (history.empty()) return kInitialPlanInstruction;
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& h = history[i];
        std::string line = "round " + std::to_string(i + 1) + ": plan: " + h.plan + "\n";
        if (h.score)
            line += "  -> score " + std::to_string(h.score->value);
        else
            line += "  -> failed: " + h.failure;
        lines.push_back(line);
    }
    return detail::join(lines, "\n");
}

std::string format_solutions(const std::vector<Solution>& solutions) {
    std::vector<std::string> parts;
    for (std::size_t i = 0; i < solutions.size(); ++i)
        parts.push_back("### Solution " + std::to_string(i + 1) + "\n" +
                        solutions[i].script);
    return detail::join(parts, "\n\n");
}

void require_ensemble_inputs(const std::vector<Solution>& solutions) {
    if (solutions.size() < 2)
        throw InvalidArgument("ensembling needs at least two solutions, got " +
                              std::to_string(solutions.size()));
    for (const auto& s : solutions)
        if (!s.score) throw UnscoredSolution("every ensemble input must be scored");
}

} // namespace

std::string propose_ensemble_plan(RunContext& ctx, const std::vector<Solution>& solutions,
                                  const std::vector<EnsembleFeedback>& history) {
    require_ensemble_inputs(solutions);
    std::string prompt = ctx.gateway->render(AgentRole::EnsPlanner,
                                             {{"scripts", format_solutions(solutions)},
                                              {"history", format_history(history)}});
    return detail::trim(ctx.gateway->invoke(AgentRole::EnsPlanner, prompt));
}

Solution implement_ensemble(RunContext& ctx, const std::string& plan,
                            const std::vector<Solution>& solutions) {
    if (detail::trim(plan).empty()) throw InvalidArgument("ensemble plan is empty");
    std::string response = ctx.gateway->invoke_role(
        AgentRole::Ensembler,
        {{"plan", plan}, {"scripts", format_solutions(solutions)}});
    std::string script = extract_script(response);
    if (detail::trim(script).empty())
        throw EmptyScript("ensembler returned no script");
    std::vector<std::string> lineage;
    for (const auto& s : solutions) lineage.push_back(s.id);
    Solution merged = make_solution(script, Origin::Ensembled, std::move(lineage));
    return check_leakage(ctx, merged);
}

namespace {

Solution run_ensemble_loop(RunContext& ctx, const std::vector<Solution>& solutions,
                           EnsembleState state) {
    require_ensemble_inputs(solutions);
    const int rounds = ctx.cfg->ensemble_rounds;

    for (int r = state.next_round; r <= rounds; ++r) {
        if (ctx.out_of_budget()) {
            ctx.journal->note("budget exhausted: ensemble truncated", {{"round", r}});
            break;
        }
        ctx.check_halt();

        std::string plan = propose_ensemble_plan(ctx, solutions, state.history);

        std::optional<Solution> merged;
        std::string failure;
        try {
            merged = implement_ensemble(ctx, plan, solutions);
        } catch (const EmptyScript& e) {
            failure = e.what();
        }

        if (merged) {
            RepairResult rr = evaluate_with_repair(ctx, merged->script, ScoreMode::Required);
            if (rr.ok) {
                Solution scored = make_solution(rr.script, Origin::Ensembled, merged->lineage);
                scored.score = rr.score;
                state.history.push_back({plan, rr.score, ""});
                bool new_best =
                    !state.best ||
                    compare_scores(*rr.score, *state.best->score) == Ordering::ABetter;
                if (new_best) {
                    state.best = scored;
                    state.best_round = r;
                    ctx.journal->decision("ensemble", "accept",
                                          {{"round", r},
                                           {"score", rr.score->value},
                                           {"solution_sha", short_hash(scored.script)}});
                } else {
                    ctx.journal->decision("ensemble", "reject",
                                          {{"round", r}, {"score", rr.score->value}});
                }
            } else {
                failure = "debug_failed";
            }
        }
        if (!failure.empty()) {
            state.history.push_back({plan, std::nullopt, failure});
            ctx.journal->decision("ensemble", "reject",
                                  {{"round", r}, {"reason", failure}});
        }

        state.next_round = r + 1;
        ctx.checkpoint("ensemble-round:" + std::to_string(r), state.to_json());
    }

    if (state.best) {
        // The argmax over rounds wins even when it trails the best single
        // solution; journal the comparison for the audit trail.
        std::vector<ScoreRecord> input_scores;
        for (const auto& s : solutions) input_scores.push_back(*s.score);
        std::size_t best_input = argmax_first_wins(input_scores);
        ctx.journal->note("ensemble winner vs best input",
                          {{"winner_score", state.best->score->value},
                           {"best_input_score", input_scores[best_input].value}});
        ctx.journal->decision("ensemble", "select",
                              {{"round", state.best_round},
                               {"score", state.best->score->value},
                               {"solution_sha", short_hash(state.best->script)}});
        return *state.best;
    }

    // Every round was discarded; a run must still hand something over.
    std::vector<ScoreRecord> input_scores;
    for (const auto& s : solutions) input_scores.push_back(*s.score);
    std::size_t pick = argmax_first_wins(input_scores);
    ctx.journal->note("all ensemble rounds discarded; falling back to the best input");
    ctx.journal->decision("ensemble", "select",
                          {{"fallback", true},
                           {"input", pick + 1},
                           {"score", input_scores[pick].value},
                           {"solution_sha", short_hash(solutions[pick].script)}});
    return solutions[pick];
}

} // namespace

Solution ensemble(RunContext& ctx, const std::vector<Solution>& solutions) {
    return run_ensemble_loop(ctx, solutions, EnsembleState{});
}

Solution ensemble_from(RunContext& ctx, const std::vector<Solution>& solutions,
                       EnsembleState state) {
    return run_ensemble_loop(ctx, solutions, std::move(state));
}

} // namespace mleng
