#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mleng/core.hpp"
#include "mleng/journal.hpp"

namespace mleng {

// Bounded pool of execution slots. Keeps wall-clock measurements meaningful
// when several pipelines share one machine.
class Semaphore {
public:
    explicit Semaphore(int slots);
    void acquire();
    void release();

private:
    std::mutex mu_;
    std::condition_variable cv_;
    int slots_;
};

class SlotGuard {
public:
    explicit SlotGuard(Semaphore* sem) : sem_(sem) {
        if (sem_) sem_->acquire();
    }
    ~SlotGuard() {
        if (sem_) sem_->release();
    }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;

private:
    Semaphore* sem_;
};

// Per-run execution area:
//   <root>/input/     read-only view of the task's data (symlink when possible)
//   <root>/exec-NNN/  one fresh directory per execution, holding
//                     solution.<ext>, stdout.txt, stderr.txt
// Scripts run with cwd = root, so they read ./input/... and write scratch
// files next to themselves.
class Workspace {
public:
    static Workspace create(const std::filesystem::path& root,
                            const std::filesystem::path& data_root);
    static Workspace open(const std::filesystem::path& root);

    Workspace(Workspace&& other) noexcept
        : root_(std::move(other.root_)), next_(other.next_.load()) {}
    Workspace& operator=(Workspace&& other) noexcept {
        root_ = std::move(other.root_);
        next_.store(other.next_.load());
        return *this;
    }

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path input_dir() const { return root_ / "input"; }
    std::filesystem::path exec_dir(int exec_id) const;

    int alloc_exec_id();
    // Resume support: never reuse ids at or below `max_seen`.
    void bump_exec_floor(int max_seen);

private:
    Workspace() = default;
    std::filesystem::path root_;
    std::atomic<int> next_{0};
};

struct ExecutionResult {
    std::string stdout_text;
    std::string stderr_text;
    int exit_status = 0;
    std::chrono::milliseconds duration{0};
    bool timed_out = false;

    bool succeeded() const { return exit_status == 0 && !timed_out; }
};

struct BugRecord {
    std::string traceback;
    std::string script;
};

// Execution backend. The process executor runs real interpreters; the
// scripted executor replays directive lines for deterministic tests.
class ExecutionEngine {
public:
    virtual ~ExecutionEngine() = default;

    virtual ExecutionResult run_script(const std::string& script, Workspace& ws,
                                       int exec_id, std::chrono::seconds timeout) = 0;

    // Reproduce the result of a journaled execution without re-running.
    // The default re-runs (fine for deterministic scripted backends).
    virtual ExecutionResult replay_script(const std::string& script, Workspace& ws,
                                          const Event& record,
                                          std::chrono::seconds timeout);
};

class ProcessExecutor : public ExecutionEngine {
public:
    struct Options {
        std::vector<std::string> command{"python3"}; // argv prefix; script path appended
        std::string script_ext = "py";
        std::chrono::seconds supervision_slack{5};
        Semaphore* pool = nullptr;
    };

    explicit ProcessExecutor(Options opts);

    ExecutionResult run_script(const std::string& script, Workspace& ws, int exec_id,
                               std::chrono::seconds timeout) override;
    ExecutionResult replay_script(const std::string& script, Workspace& ws,
                                  const Event& record,
                                  std::chrono::seconds timeout) override;

private:
    Options opts_;
};

// Deterministic test backend driven by a directive line inside the script:
//   # RESULT score=<number>     exit 0, stdout carries the score marker
//   # RESULT crash msg=<text>   exit 1, stderr carries a traceback
//   # RESULT timeout            timed out at the configured limit
//   # RESULT silent             exit 0, no output
//   # RESULT stdout=<text>      exit 0, literal stdout (\n escapes honored)
//   # RESULT write=<relpath>    exit 0, creates the file under the workspace
// No directive behaves like silent.
class ScriptedExecutor : public ExecutionEngine {
public:
    ExecutionResult run_script(const std::string& script, Workspace& ws, int exec_id,
                               std::chrono::seconds timeout) override;
};

inline constexpr const char* kScoreMarker = "Final Validation Performance: ";

// Scans stdout for marker lines and returns the last one as a finite score.
// Throws MissingScore when no marker line parses, NonFiniteScore when the
// last marker carries NaN or infinity.
ScoreRecord parse_score(const std::string& stdout_text, Direction direction);

} // namespace mleng
