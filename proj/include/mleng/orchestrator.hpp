#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mleng/core.hpp"
#include "mleng/gateway.hpp"
#include "mleng/journal.hpp"

namespace mleng {

// Resolved engine configuration: the search-budget knobs plus deployment
// wiring. Sources, in increasing precedence: built-in defaults, the
// scenario's scenario.conf, --config, CLI flags.
struct EngineConfig {
    RunConfig run;

    std::filesystem::path mock_dir;  // scenario transcripts; empty = live provider
    std::string executor = "process"; // process | scripted
    std::vector<std::string> interpreter{"python3"};
    std::filesystem::path prompts_dir;

    std::string provider_url;
    std::string provider_model;
    std::string credential_env = "MLENG_PROVIDER_CREDENTIAL";
    std::string retriever_url;
    std::string retriever_model;

    int retry_budget = 3;
    int backoff_ms = 200;
    int pool_size = 0; // 0 = half the hardware threads
    int supervision_slack_s = 5;

    std::string halt_after; // checkpoint label that stops the run (tests)
    std::map<int, std::string> ablation_overrides;

    void apply_kv(const std::string& key, const std::string& value);
    void apply_file(const std::filesystem::path& file);
    void validate() const;

    nlohmann::json to_json() const;
    static EngineConfig from_json(const nlohmann::json& j);
};

std::filesystem::path default_prompts_dir();

// Base configuration for running against a scenario directory: transcripts
// from the scenario, the scripted executor and zero retry backoff unless
// the scenario's scenario.conf says otherwise.
EngineConfig scenario_config(const std::filesystem::path& scenario_dir);

struct RunResult {
    std::filesystem::path run_dir;
    std::filesystem::path submission;
    std::filesystem::path final_solution;
    double final_score = 0.0;
};

// Full run: L parallel pipelines (init -> refine), ensemble across their
// results (skipped for L=1), subsampling removal, submission generation.
// Throws AllCandidatesFailed / SubmissionMissing on fatal search failures
// and Halted when a configured halt checkpoint fires.
RunResult run(const std::filesystem::path& task_dir, EngineConfig config,
              const std::filesystem::path& out_dir);

// Continues a halted or killed run from its journals. Completed agent calls
// and executions are never repeated. A completed run is a no-op.
RunResult resume(const std::filesystem::path& run_dir);

// Prints the decision trace and the best-score trajectory per pipeline.
// Returns the exit code (nonzero on a corrupt journal).
int audit(const std::filesystem::path& run_dir, std::ostream& out);

// Folds decision events into the (solution sha, best score) pair they
// imply; audit uses this and tests compare it against the live run.
struct DecisionFold {
    std::string solution_sha;
    std::optional<double> best_score;
    std::vector<double> accepted_scores; // improvement trajectory
};
DecisionFold fold_decisions(const std::vector<Event>& events);

// Optional task-directory extras: user-supplied model cards (cards.json).
std::vector<ModelCard> load_injected_cards(const std::filesystem::path& task_dir);

} // namespace mleng
