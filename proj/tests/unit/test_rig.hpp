#pragma once

// Shared harness for pipeline-level tests: scripted executor, in-memory
// mock transcripts, temp workspace, and a real journal on disk.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mleng/context.hpp"
#include "mleng/executor.hpp"
#include "mleng/gateway.hpp"
#include "mleng/journal.hpp"
#include "mleng/orchestrator.hpp"
#include "mleng/task.hpp"

namespace mleng::testing {

namespace fs = std::filesystem;

inline fs::path make_temp_dir() {
    std::string tmpl = (fs::temp_directory_path() / "mleng-test-XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    return fs::path(buf.data());
}

inline const char* kNoLeak = R"({"leakage_detected": false})";

class TestRig {
public:
    explicit TestRig(std::map<AgentRole, std::vector<std::string>> transcripts,
                     Direction direction = Direction::Maximize)
        : dir_(make_temp_dir()) {
        fs::create_directories(dir_ / "data");
        std::ofstream(dir_ / "data" / "train.csv") << "x,y\n1,2\n";

        task_.text = "toy test task";
        task_.metric_name = "metric";
        task_.direction = direction;
        task_.data_root = dir_ / "data";
        task_.submission_name = "submission.csv";
        task_.script_ext = "py";

        cfg_.num_candidates = 2;
        cfg_.outer_steps = 2;
        cfg_.inner_steps = 2;
        cfg_.parallel_solutions = 1;
        cfg_.ensemble_rounds = 3;
        cfg_.max_debug_rounds = 3;
        cfg_.per_exec_timeout = std::chrono::seconds(60);
        cfg_.total_budget = std::chrono::seconds(24 * 3600);

        templates_ = TemplateSet::load(default_prompts_dir());
        provider_ = std::make_unique<MockProvider>(std::move(transcripts));
        journal_ = std::make_unique<Journal>(dir_ / "journal.jsonl");
        workspace_ = std::make_unique<Workspace>(
            Workspace::create(dir_ / "ws", task_.data_root));
        budget_ = std::make_unique<BudgetClock>(cfg_.total_budget);

        GatewayOptions opts;
        opts.retry_budget = 3;
        opts.backoff = std::chrono::milliseconds(0);
        gateway_ = std::make_unique<Gateway>(templates_, *provider_, *journal_, opts);

        ctx_.task = &task_;
        ctx_.cfg = &cfg_;
        ctx_.gateway = gateway_.get();
        ctx_.engine = &engine_;
        ctx_.journal = journal_.get();
        ctx_.workspace = workspace_.get();
        ctx_.budget = budget_.get();
        ctx_.stop = &stop_;
        ctx_.leakage_cache = &leakage_;
        ctx_.pipeline_index = 1;
        ctx_.ablation_overrides = &overrides_;
    }

    ~TestRig() {
        std::error_code ec;
        fs::remove_all(dir_, ec);
    }

    RunContext& ctx() { return ctx_; }
    RunConfig& cfg() { return cfg_; }
    TaskDescription& task() { return task_; }
    MockProvider& provider() { return *provider_; }
    std::map<int, std::string>& overrides() { return overrides_; }
    const fs::path& dir() const { return dir_; }
    Workspace& workspace() { return *workspace_; }

    // Swap in a real interpreter-backed executor (scripts run under python3).
    void use_process_executor() {
        ProcessExecutor::Options opts;
        opts.script_ext = task_.script_ext;
        process_engine_ = std::make_unique<ProcessExecutor>(opts);
        ctx_.engine = process_engine_.get();
    }

    void expire_budget() {
        budget_ = std::make_unique<BudgetClock>(std::chrono::seconds(0));
        ctx_.budget = budget_.get();
    }

    std::vector<Event> events() const { return Journal::read_file(dir_ / "journal.jsonl"); }

    std::size_t count_events(const std::string& type) const {
        std::size_t n = 0;
        for (const auto& e : events())
            if (e.type == type) ++n;
        return n;
    }

    std::vector<Event> decisions(const std::string& stage) const {
        std::vector<Event> out;
        for (const auto& e : events())
            if (e.type == "decision" && e.data.at("stage") == stage) out.push_back(e);
        return out;
    }

private:
    fs::path dir_;
    TaskDescription task_;
    RunConfig cfg_;
    TemplateSet templates_;
    std::unique_ptr<MockProvider> provider_;
    std::unique_ptr<Journal> journal_;
    std::unique_ptr<Workspace> workspace_;
    std::unique_ptr<BudgetClock> budget_;
    StopToken stop_;
    LeakageCache leakage_;
    ScriptedExecutor engine_;
    std::unique_ptr<ProcessExecutor> process_engine_;
    std::unique_ptr<Gateway> gateway_;
    std::map<int, std::string> overrides_;
    RunContext ctx_;
};

// Fenced-code helper for building mock responses.
inline std::string fenced(const std::string& body) {
    return "```\n" + body + "\n```";
}

} // namespace mleng::testing
