#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include <json.hpp>

#include "mleng/core.hpp"
#include "mleng/executor.hpp"
#include "mleng/gateway.hpp"
#include "mleng/journal.hpp"
#include "mleng/task.hpp"

namespace mleng {

// Wall-clock budget for the whole run. `elapsed_offset` accounts for time
// already spent before a resume.
class BudgetClock {
public:
    BudgetClock(std::chrono::seconds budget,
                std::chrono::seconds elapsed_offset = std::chrono::seconds{0});

    bool expired() const;
    std::chrono::seconds remaining() const;

private:
    std::chrono::steady_clock::time_point start_;
    std::chrono::seconds budget_;
};

class StopToken {
public:
    void request() { stop_.store(true); }
    bool requested() const { return stop_.load(); }

private:
    std::atomic<bool> stop_{false};
};

// Shared content-hash cache so identical scripts are leakage-checked once.
class LeakageCache {
public:
    std::optional<std::string> lookup(std::uint64_t key) const;
    void store(std::uint64_t key, std::string result_script);

private:
    mutable std::mutex mu_;
    std::unordered_map<std::uint64_t, std::string> cache_;
};

// Everything one pipeline (or the orchestrator phase) needs. Values the
// pipelines share — executor pool, leakage cache, budget, stop token — are
// internally synchronized; the rest is pipeline-local.
struct RunContext {
    const TaskDescription* task = nullptr;
    const RunConfig* cfg = nullptr;
    Gateway* gateway = nullptr;
    ExecutionEngine* engine = nullptr;
    Journal* journal = nullptr;
    Workspace* workspace = nullptr;
    BudgetClock* budget = nullptr;
    StopToken* stop = nullptr;
    LeakageCache* leakage_cache = nullptr;

    int pipeline_index = 0;           // 0 = orchestrator phase
    std::string halt_after;           // checkpoint label that stops the run
    const std::map<int, std::string>* ablation_overrides = nullptr;

    // True when no new search execution may start. Always false while the
    // journal replays a resumed run: the recorded control flow wins.
    bool out_of_budget() const;

    // Throws Halted when another pipeline hit the halt checkpoint.
    void check_halt() const;

    // Journals a checkpoint and, if its label matches halt_after, requests a
    // stop and throws Halted (live runs only).
    void checkpoint(const std::string& label, nlohmann::json state) const;

    std::string checkpoint_scope() const;
};

nlohmann::json solution_to_json(const Solution& s);
Solution solution_from_json(const nlohmann::json& j);

} // namespace mleng
