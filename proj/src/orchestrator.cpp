#include "mleng/orchestrator.hpp"

#include <fstream>
#include <iostream>
#include <thread>

#include "mleng/context.hpp"
#include "mleng/ensemble.hpp"
#include "mleng/executor.hpp"
#include "mleng/finalizer.hpp"
#include "mleng/init_pipeline.hpp"
#include "mleng/refinement.hpp"
#include "mleng/robustness.hpp"
#include "mleng/task.hpp"
#include "util.hpp"

namespace mleng {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// --- journal analysis for resume --------------------------------------------

struct JournalAnalysis {
    std::vector<Event> events;
    std::uint64_t last_seq = 0;
    std::deque<Event> replay_tail; // events after the last checkpoint
    std::string last_checkpoint_label;
    json last_checkpoint_state;
    int exec_floor = -1;
    std::map<std::string, std::size_t> role_calls;

    const json* find_checkpoint(const std::string& label) const {
        for (auto it = events.rbegin(); it != events.rend(); ++it)
            if (it->type == "checkpoint" && it->data.at("label") == label)
                return &it->data.at("state");
        return nullptr;
    }
};

JournalAnalysis analyze_journal(const fs::path& file) {
    JournalAnalysis a;
    a.events = Journal::read_file(file);
    if (a.events.empty()) return a;
    a.last_seq = a.events.back().seq;
    for (const auto& e : a.events) {
        if (e.type == "agent_call")
            ++a.role_calls[e.data.at("role").get<std::string>()];
        else if (e.type == "execution")
            a.exec_floor = std::max(a.exec_floor, e.data.at("exec_id").get<int>());
    }
    std::size_t cp = last_checkpoint_index(a.events);
    if (cp != static_cast<std::size_t>(-1)) {
        a.last_checkpoint_label = a.events[cp].data.at("label").get<std::string>();
        a.last_checkpoint_state = a.events[cp].data.at("state");
        for (std::size_t i = cp + 1; i < a.events.size(); ++i)
            a.replay_tail.push_back(a.events[i]);
    } else {
        for (const auto& e : a.events) a.replay_tail.push_back(e);
    }
    return a;
}

void advance_mock(MockProvider& mock, const std::map<std::string, std::size_t>& calls) {
    for (AgentRole role : all_roles()) {
        auto it = calls.find(to_string(role));
        if (it != calls.end()) mock.advance(role, it->second);
    }
}

fs::path transcripts_for(const EngineConfig& config, int pipeline) {
    fs::path base = config.mock_dir;
    if (fs::exists(base / "provider")) base /= "provider";
    fs::path sub = pipeline == 0 ? base / "orchestrator"
                                 : base / ("pipeline-" + std::to_string(pipeline));
    return fs::is_directory(sub) ? sub : base;
}

// --- shared services ---------------------------------------------------------

struct Services {
    TaskDescription task;
    EngineConfig config;
    fs::path run_dir;
    TemplateSet templates;
    std::vector<ModelCard> injected;

    std::unique_ptr<Semaphore> pool;
    std::unique_ptr<ProcessExecutor> process_exec;
    std::unique_ptr<ScriptedExecutor> scripted_exec;
    ExecutionEngine* engine = nullptr;
    std::unique_ptr<HttpProvider> http;

    std::unique_ptr<BudgetClock> budget;
    StopToken stop;
    LeakageCache leakage;
};

std::unique_ptr<Services> build_services(const fs::path& task_dir, EngineConfig config,
                                         const fs::path& run_dir,
                                         std::chrono::seconds elapsed) {
    config.validate();
    auto svc = std::make_unique<Services>();
    svc->task = load_task(task_dir);
    svc->config = std::move(config);
    svc->run_dir = run_dir;
    svc->templates = TemplateSet::load(svc->config.prompts_dir.empty()
                                           ? default_prompts_dir()
                                           : svc->config.prompts_dir);
    svc->injected = load_injected_cards(task_dir);

    int slots = svc->config.pool_size > 0
                    ? svc->config.pool_size
                    : static_cast<int>(std::max(1u, std::thread::hardware_concurrency() / 2));
    svc->pool = std::make_unique<Semaphore>(slots);

    if (svc->config.executor == "scripted") {
        svc->scripted_exec = std::make_unique<ScriptedExecutor>();
        svc->engine = svc->scripted_exec.get();
    } else {
        ProcessExecutor::Options opts;
        opts.command = svc->config.interpreter;
        opts.script_ext = svc->task.script_ext;
        opts.supervision_slack = std::chrono::seconds(svc->config.supervision_slack_s);
        opts.pool = svc->pool.get();
        svc->process_exec = std::make_unique<ProcessExecutor>(opts);
        svc->engine = svc->process_exec.get();
    }

    if (svc->config.mock_dir.empty()) {
        HttpProvider::Options opts;
        opts.url = svc->config.provider_url;
        opts.model = svc->config.provider_model;
        opts.credential_env = svc->config.credential_env;
        opts.retriever_url = svc->config.retriever_url;
        opts.retriever_model = svc->config.retriever_model;
        svc->http = std::make_unique<HttpProvider>(std::move(opts));
    }

    svc->budget = std::make_unique<BudgetClock>(svc->config.run.total_budget, elapsed);
    return svc;
}

GatewayOptions gateway_options(const EngineConfig& config, std::uint64_t seed) {
    GatewayOptions opts;
    opts.retry_budget = config.retry_budget;
    opts.backoff = std::chrono::milliseconds(config.backoff_ms);
    opts.sampling_seed = seed;
    return opts;
}

// --- pipeline execution ------------------------------------------------------

struct PipelineEntry {
    enum class Phase { Start, InitDone, Refining, Done } phase = Phase::Start;
    bool fresh = true;
    std::optional<Solution> s0;
    std::optional<RefineState> refine_state;
    std::optional<Solution> final;
    std::deque<Event> replay_tail;
    std::uint64_t last_seq = 0;
    int exec_floor = -1;
    std::map<std::string, std::size_t> role_calls;
};

PipelineEntry analyze_pipeline(const fs::path& journal_file) {
    JournalAnalysis a = analyze_journal(journal_file);
    PipelineEntry entry;
    entry.replay_tail = std::move(a.replay_tail);
    entry.last_seq = a.last_seq;
    entry.exec_floor = a.exec_floor;
    entry.role_calls = std::move(a.role_calls);
    entry.fresh = a.last_checkpoint_label.empty();

    const std::string& label = a.last_checkpoint_label;
    if (label.empty() || label == "pipeline-start") {
        entry.phase = PipelineEntry::Phase::Start;
    } else if (label == "init-done") {
        entry.phase = PipelineEntry::Phase::InitDone;
        entry.s0 = solution_from_json(a.last_checkpoint_state.at("solution"));
    } else if (detail::starts_with(label, "outer-step:")) {
        entry.phase = PipelineEntry::Phase::Refining;
        entry.refine_state = RefineState::from_json(a.last_checkpoint_state);
    } else if (label == "refine-done") {
        entry.phase = PipelineEntry::Phase::Done;
        entry.final = solution_from_json(a.last_checkpoint_state.at("solution"));
    } else {
        throw CorruptJournal(journal_file.string() + ": unknown checkpoint label '" + label +
                             "'");
    }
    return entry;
}

Solution pipeline_flow(RunContext& ctx, const std::vector<ModelCard>& injected,
                       PipelineEntry entry) {
    if (entry.fresh) ctx.checkpoint("pipeline-start", json::object());

    if (entry.phase == PipelineEntry::Phase::Done) return *entry.final;

    Solution final;
    if (entry.phase == PipelineEntry::Phase::Refining) {
        final = refine_from(ctx, *entry.refine_state);
    } else {
        Solution s0;
        if (entry.phase == PipelineEntry::Phase::InitDone) {
            s0 = *entry.s0;
        } else {
            s0 = generate_initial_solution(ctx, injected);
            ctx.checkpoint("init-done", {{"solution", solution_to_json(s0)}});
        }
        final = refine(ctx, s0);
    }
    ctx.checkpoint("refine-done", {{"solution", solution_to_json(final)}});
    return final;
}

struct PipelineOutcome {
    std::optional<Solution> solution;
    bool all_candidates_failed = false;
    std::string failure;
    bool halted = false;
    std::exception_ptr fatal;
};

PipelineOutcome run_pipeline(Services& svc, int index, PipelineEntry entry) {
    PipelineOutcome outcome;
    try {
        fs::path dir = svc.run_dir / ("pipeline-" + std::to_string(index));
        Workspace ws = fs::exists(dir) ? Workspace::open(dir)
                                       : Workspace::create(dir, svc.task.data_root);
        ws.bump_exec_floor(entry.exec_floor);

        Journal journal(dir / "journal.jsonl", entry.last_seq);
        journal.set_replay_tail(std::move(entry.replay_tail));

        std::unique_ptr<MockProvider> mock;
        Provider* provider = svc.http.get();
        if (!svc.config.mock_dir.empty()) {
            mock = std::make_unique<MockProvider>(transcripts_for(svc.config, index));
            advance_mock(*mock, entry.role_calls);
            provider = mock.get();
        }
        Gateway gateway(svc.templates, *provider, journal,
                        gateway_options(svc.config,
                                        static_cast<std::uint64_t>(svc.config.run.seed + index)));

        RunContext ctx;
        ctx.task = &svc.task;
        ctx.cfg = &svc.config.run;
        ctx.gateway = &gateway;
        ctx.engine = svc.engine;
        ctx.journal = &journal;
        ctx.workspace = &ws;
        ctx.budget = svc.budget.get();
        ctx.stop = &svc.stop;
        ctx.leakage_cache = &svc.leakage;
        ctx.pipeline_index = index;
        ctx.halt_after = svc.config.halt_after;
        ctx.ablation_overrides = &svc.config.ablation_overrides;

        outcome.solution = pipeline_flow(ctx, svc.injected, std::move(entry));
    } catch (const AllCandidatesFailed& e) {
        outcome.all_candidates_failed = true;
        outcome.failure = e.what();
    } catch (const Halted&) {
        outcome.halted = true;
    } catch (...) {
        outcome.fatal = std::current_exception();
    }
    return outcome;
}

// --- orchestrator-level flow -------------------------------------------------

struct OrchestratorEntry {
    enum class Phase {
        Start,
        PipelinesDone,
        Ensembling,
        EnsembleDone,
        Desubsampled,
        Done
    } phase = Phase::Start;
    bool fresh = true;
    std::vector<Solution> solutions;
    std::optional<EnsembleState> ensemble_state;
    std::optional<Solution> winner;
    std::optional<Solution> desubsampled;
    std::deque<Event> replay_tail;
    std::uint64_t last_seq = 0;
    int exec_floor = -1;
    std::map<std::string, std::size_t> role_calls;
};

std::vector<Solution> solutions_from_state(const json& state) {
    std::vector<Solution> out;
    for (const auto& item : state.at("solutions")) out.push_back(solution_from_json(item));
    return out;
}

OrchestratorEntry analyze_orchestrator(const fs::path& journal_file) {
    JournalAnalysis a = analyze_journal(journal_file);
    OrchestratorEntry entry;
    entry.replay_tail = std::move(a.replay_tail);
    entry.last_seq = a.last_seq;
    entry.exec_floor = a.exec_floor;
    entry.role_calls = a.role_calls;
    entry.fresh = a.last_checkpoint_label.empty();

    const std::string& label = a.last_checkpoint_label;
    if (label.empty() || label == "run-start") {
        entry.phase = OrchestratorEntry::Phase::Start;
    } else if (label == "pipelines-done") {
        entry.phase = OrchestratorEntry::Phase::PipelinesDone;
    } else if (detail::starts_with(label, "ensemble-round:")) {
        entry.phase = OrchestratorEntry::Phase::Ensembling;
        entry.ensemble_state = EnsembleState::from_json(a.last_checkpoint_state);
    } else if (label == "ensemble-done") {
        entry.phase = OrchestratorEntry::Phase::EnsembleDone;
        entry.winner = solution_from_json(a.last_checkpoint_state.at("solution"));
    } else if (label == "desubsample-done") {
        entry.phase = OrchestratorEntry::Phase::Desubsampled;
        entry.desubsampled = solution_from_json(a.last_checkpoint_state.at("solution"));
    } else if (label == "run-done") {
        entry.phase = OrchestratorEntry::Phase::Done;
    } else {
        throw CorruptJournal(journal_file.string() + ": unknown checkpoint label '" + label +
                             "'");
    }

    if (entry.phase >= OrchestratorEntry::Phase::PipelinesDone) {
        const json* state = a.find_checkpoint("pipelines-done");
        if (!state)
            throw CorruptJournal(journal_file.string() +
                                 ": missing pipelines-done checkpoint");
        entry.solutions = solutions_from_state(*state);
    }
    if (entry.phase >= OrchestratorEntry::Phase::EnsembleDone && !entry.winner) {
        const json* state = a.find_checkpoint("ensemble-done");
        if (state) entry.winner = solution_from_json(state->at("solution"));
    }
    if (entry.phase == OrchestratorEntry::Phase::Done) {
        const json* state = a.find_checkpoint("desubsample-done");
        if (state) entry.desubsampled = solution_from_json(state->at("solution"));
    }
    return entry;
}

RunResult execute(Services& svc, OrchestratorEntry orch,
                  std::vector<PipelineEntry> pipeline_entries) {
    const int parallel = svc.config.run.parallel_solutions;

    Workspace ws = fs::exists(svc.run_dir / "input")
                       ? Workspace::open(svc.run_dir)
                       : Workspace::create(svc.run_dir, svc.task.data_root);
    ws.bump_exec_floor(orch.exec_floor);

    Journal journal(svc.run_dir / "journal.jsonl", orch.last_seq);
    journal.set_replay_tail(std::move(orch.replay_tail));

    std::unique_ptr<MockProvider> mock;
    Provider* provider = svc.http.get();
    if (!svc.config.mock_dir.empty()) {
        mock = std::make_unique<MockProvider>(transcripts_for(svc.config, 0));
        advance_mock(*mock, orch.role_calls);
        provider = mock.get();
    }
    Gateway gateway(svc.templates, *provider, journal,
                    gateway_options(svc.config,
                                    static_cast<std::uint64_t>(svc.config.run.seed)));

    RunContext ctx;
    ctx.task = &svc.task;
    ctx.cfg = &svc.config.run;
    ctx.gateway = &gateway;
    ctx.engine = svc.engine;
    ctx.journal = &journal;
    ctx.workspace = &ws;
    ctx.budget = svc.budget.get();
    ctx.stop = &svc.stop;
    ctx.leakage_cache = &svc.leakage;
    ctx.pipeline_index = 0;
    ctx.halt_after = svc.config.halt_after;
    ctx.ablation_overrides = &svc.config.ablation_overrides;

    if (orch.fresh) {
        std::vector<std::int64_t> seeds;
        for (int l = 1; l <= parallel; ++l) seeds.push_back(svc.config.run.seed + l);
        ctx.checkpoint("run-start",
                       {{"config", svc.config.to_json()}, {"pipeline_seeds", seeds}});
    }

    // Phase 1: the L parallel pipelines.
    std::vector<Solution> solutions;
    if (orch.phase == OrchestratorEntry::Phase::Start) {
        std::vector<PipelineOutcome> outcomes(static_cast<std::size_t>(parallel));
        std::vector<std::thread> threads;
        for (int l = 1; l <= parallel; ++l) {
            PipelineEntry entry = std::move(pipeline_entries[static_cast<std::size_t>(l - 1)]);
            threads.emplace_back([&svc, &outcomes, l, entry = std::move(entry)]() mutable {
                outcomes[static_cast<std::size_t>(l - 1)] =
                    run_pipeline(svc, l, std::move(entry));
            });
        }
        for (auto& t : threads) t.join();

        bool halted = false;
        for (int l = 1; l <= parallel; ++l) {
            auto& outcome = outcomes[static_cast<std::size_t>(l - 1)];
            if (outcome.fatal) std::rethrow_exception(outcome.fatal);
            if (outcome.halted) halted = true;
            if (outcome.all_candidates_failed)
                journal.note("pipeline failed",
                             {{"pipeline", l}, {"reason", outcome.failure}});
            if (outcome.solution) solutions.push_back(std::move(*outcome.solution));
        }
        if (halted || svc.stop.requested()) throw Halted{svc.config.halt_after};
        if (solutions.empty())
            throw AllCandidatesFailed("no pipeline produced a scored solution");

        json state;
        state["solutions"] = json::array();
        for (const auto& s : solutions) state["solutions"].push_back(solution_to_json(s));
        ctx.checkpoint("pipelines-done", state);
    } else {
        solutions = orch.solutions;
    }

    // Phase 2: ensemble across pipelines (skipped when only one result).
    Solution winner;
    if (orch.phase == OrchestratorEntry::Phase::Ensembling) {
        winner = ensemble_from(ctx, solutions, *orch.ensemble_state);
        ctx.checkpoint("ensemble-done", {{"solution", solution_to_json(winner)}});
    } else if (orch.phase <= OrchestratorEntry::Phase::PipelinesDone) {
        if (solutions.size() == 1) {
            journal.note("ensemble skipped: single pipeline result");
            winner = solutions[0];
        } else {
            winner = ensemble(ctx, solutions);
        }
        ctx.checkpoint("ensemble-done", {{"solution", solution_to_json(winner)}});
    } else {
        winner = *orch.winner;
    }

    // Phase 3: finalization. Runs even when the budget has expired; the
    // deliverable is the whole point of the run.
    Solution full_data;
    if (orch.phase <= OrchestratorEntry::Phase::EnsembleDone) {
        full_data = remove_subsampling(ctx, winner);
        ctx.checkpoint("desubsample-done", {{"solution", solution_to_json(full_data)}});
    } else {
        full_data = *orch.desubsampled;
    }

    SubmissionResult submission = make_submission(ctx, full_data);
    ctx.checkpoint("run-done",
                   {{"submission", fs::relative(submission.submission_path, svc.run_dir).string()},
                    {"solution", fs::relative(submission.solution_path, svc.run_dir).string()},
                    {"score", full_data.score ? full_data.score->value : 0.0}});

    RunResult result;
    result.run_dir = svc.run_dir;
    result.submission = submission.submission_path;
    result.final_solution = submission.solution_path;
    result.final_score = full_data.score ? full_data.score->value : 0.0;
    return result;
}

void write_run_meta(const fs::path& run_dir) {
    std::ofstream out(run_dir / "run.meta");
    auto epoch = std::chrono::duration_cast<std::chrono::seconds>(
                     std::chrono::system_clock::now().time_since_epoch())
                     .count();
    out << "start_epoch_s=" << epoch << "\n";
}

std::chrono::seconds elapsed_from_run_meta(const fs::path& run_dir) {
    std::ifstream in(run_dir / "run.meta");
    std::string line;
    while (std::getline(in, line)) {
        std::string t = detail::trim(line);
        if (detail::starts_with(t, "start_epoch_s=")) {
            long start = std::stol(t.substr(14));
            auto now = std::chrono::duration_cast<std::chrono::seconds>(
                           std::chrono::system_clock::now().time_since_epoch())
                           .count();
            return std::chrono::seconds(std::max(0L, now - start));
        }
    }
    return std::chrono::seconds{0};
}

} // namespace

RunResult run(const fs::path& task_dir, EngineConfig config, const fs::path& out_dir) {
    if (fs::exists(out_dir / "journal.jsonl"))
        throw ConfigError("output directory already holds a run: " + out_dir.string() +
                          " (use resume)");
    fs::create_directories(out_dir);

    auto svc = build_services(task_dir, std::move(config), out_dir,
                              std::chrono::seconds{0});
    write_run_meta(out_dir);
    {
        std::ofstream snapshot(out_dir / "config.json");
        json j = svc->config.to_json();
        j["task_dir"] = fs::absolute(task_dir).string();
        snapshot << j.dump(2) << "\n";
    }

    std::vector<PipelineEntry> entries(
        static_cast<std::size_t>(svc->config.run.parallel_solutions));
    return execute(*svc, OrchestratorEntry{}, std::move(entries));
}

RunResult resume(const fs::path& run_dir) {
    fs::path snapshot_file = run_dir / "config.json";
    if (!fs::exists(snapshot_file))
        throw ConfigError("not a run directory (missing config.json): " + run_dir.string());
    json snapshot;
    {
        std::ifstream in(snapshot_file);
        in >> snapshot;
    }
    EngineConfig config = EngineConfig::from_json(snapshot);
    fs::path task_dir = snapshot.at("task_dir").get<std::string>();

    OrchestratorEntry orch = analyze_orchestrator(run_dir / "journal.jsonl");
    if (orch.replay_tail.empty() && orch.fresh && orch.last_seq == 0)
        throw CorruptJournal("no journal to resume in " + run_dir.string());

    if (orch.phase == OrchestratorEntry::Phase::Done) {
        JournalAnalysis a = analyze_journal(run_dir / "journal.jsonl");
        const json* state = a.find_checkpoint("run-done");
        RunResult result;
        result.run_dir = run_dir;
        if (state) {
            result.submission = run_dir / state->at("submission").get<std::string>();
            result.final_solution = run_dir / state->at("solution").get<std::string>();
            result.final_score = state->at("score").get<double>();
        }
        if (fs::exists(result.submission)) return result; // completed: no-op
        throw SubmissionMissing("the journal records a completed run but the submission "
                                "artifact is gone: " + result.submission.string() +
                                " (start a fresh run instead of resuming)");
    }

    auto svc = build_services(task_dir, std::move(config), run_dir,
                              elapsed_from_run_meta(run_dir));

    std::vector<PipelineEntry> entries;
    for (int l = 1; l <= svc->config.run.parallel_solutions; ++l)
        entries.push_back(
            analyze_pipeline(run_dir / ("pipeline-" + std::to_string(l)) / "journal.jsonl"));

    return execute(*svc, std::move(orch), std::move(entries));
}

// --- audit -------------------------------------------------------------------

DecisionFold fold_decisions(const std::vector<Event>& events) {
    DecisionFold fold;
    for (const auto& e : events) {
        if (e.type != "decision") continue;
        const std::string kind = e.data.at("kind").get<std::string>();
        const json& detail = e.data.at("detail");
        if (kind == "accept") {
            if (detail.contains("score")) {
                fold.best_score = detail["score"].get<double>();
                fold.accepted_scores.push_back(*fold.best_score);
            }
            if (detail.contains("solution_sha"))
                fold.solution_sha = detail["solution_sha"].get<std::string>();
        } else if (kind == "select") {
            if (detail.contains("solution_sha"))
                fold.solution_sha = detail["solution_sha"].get<std::string>();
            if (detail.contains("score")) fold.best_score = detail["score"].get<double>();
        }
    }
    return fold;
}

namespace {

void print_events(const std::vector<Event>& events, const std::string& scope,
                  std::ostream& out) {
    for (const auto& e : events) {
        if (e.type == "decision") {
            out << scope << " " << e.data.at("stage").get<std::string>() << " "
                << e.data.at("kind").get<std::string>() << " "
                << e.data.at("detail").dump() << "\n";
        } else if (e.type == "checkpoint") {
            out << scope << " checkpoint " << e.data.at("label").get<std::string>() << "\n";
        } else if (e.type == "note") {
            out << scope << " note " << e.data.at("note").get<std::string>() << "\n";
        }
    }
}

void print_trajectory(const std::vector<Event>& events, const std::string& scope,
                      std::ostream& out) {
    DecisionFold fold = fold_decisions(events);
    out << scope << " trajectory:";
    for (double v : fold.accepted_scores) out << " " << v;
    out << "\n";
    if (fold.best_score)
        out << scope << " best: " << *fold.best_score << " (solution " << fold.solution_sha
            << ")\n";
}

} // namespace

int audit(const fs::path& run_dir, std::ostream& out) {
    try {
        auto main_events = Journal::read_file(run_dir / "journal.jsonl");
        if (main_events.empty()) {
            out << "no journal found in " << run_dir << "\n";
            return 1;
        }
        for (int l = 1;; ++l) {
            fs::path file = run_dir / ("pipeline-" + std::to_string(l)) / "journal.jsonl";
            if (!fs::exists(file)) break;
            auto events = Journal::read_file(file);
            std::string scope = "pipeline-" + std::to_string(l);
            print_events(events, scope, out);
            print_trajectory(events, scope, out);
        }
        print_events(main_events, "run", out);
        print_trajectory(main_events, "run", out);
        return 0;
    } catch (const CorruptJournal& e) {
        out << "corrupt journal: " << e.what() << "\n";
        return 1;
    }
}

} // namespace mleng
