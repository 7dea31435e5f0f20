#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mleng/core.hpp"
#include "mleng/errors.hpp"

namespace mleng {

// One journal record. `data` carries the type-specific fields.
//
// Types and their data keys:
//   agent_call : role, attempt, seed, wall_ms, prompt, response, failed
//   execution  : exec_id, script_sha, exit_status, timed_out, duration_ms
//   score      : exec_id, value, direction
//   decision   : stage, kind (accept|reject|stop|select), detail{...}
//   checkpoint : label, state{...}
//   note       : note, data{...}
struct Event {
    int schema = 1;
    std::uint64_t seq = 0;
    std::string type;
    nlohmann::json data;

    nlohmann::json to_json() const;
    static Event from_json(const nlohmann::json& j);
};

// Append-only JSONL run journal. Each append is a single write() of one
// line, flushed before return; checkpoints are additionally fsync'ed.
//
// Resume support: after loading the events that follow the last checkpoint,
// install them as a replay tail. While the tail is non-empty every append
// becomes a verify-and-consume against the recorded event (nothing is
// rewritten), and callers that need recorded data (agent responses,
// execution results) pull it via the replay_* accessors. A mismatch means
// the rerun diverged from the recorded run and raises CorruptJournal.
class Journal {
public:
    explicit Journal(std::filesystem::path file, std::uint64_t resume_after_seq = 0);
    ~Journal();

    Journal(const Journal&) = delete;
    Journal& operator=(const Journal&) = delete;

    const std::filesystem::path& path() const { return path_; }

    void set_replay_tail(std::deque<Event> tail);
    bool replaying() const;

    // Peek the type of the next replay event; empty when live.
    std::string replay_peek_type() const;

    // Consume the next replay event, requiring it to be an agent_call for
    // `role`. Returns the recorded event (response included).
    Event replay_agent_call(const std::string& role);

    // Consume the next replay event, requiring an execution of the script
    // with this hash. Returns the recorded event.
    Event replay_execution(const std::string& script_sha);

    // Appends (or, when replaying, verify-consumes) one event per call.
    void agent_call(const std::string& role, int attempt, std::uint64_t seed,
                    long wall_ms, const std::string& prompt,
                    const std::string& response, bool failed);
    void execution(int exec_id, const std::string& script_sha, int exit_status,
                   bool timed_out, long duration_ms);
    void score(int exec_id, double value, Direction direction);
    void decision(const std::string& stage, const std::string& kind,
                  nlohmann::json detail);
    void note(const std::string& text, nlohmann::json data = nlohmann::json::object());
    void checkpoint(const std::string& label, nlohmann::json state);

    std::uint64_t last_seq() const;

    // Parses a journal file. Throws CorruptJournal on an unparsable line,
    // a bad schema, or a sequence gap. A missing file yields {}.
    static std::vector<Event> read_file(const std::filesystem::path& file);

private:
    void append(Event e);
    void write_line(const Event& e, bool sync);
    std::optional<Event> consume_for(const std::string& type);

    std::filesystem::path path_;
    int fd_ = -1;
    std::uint64_t seq_;
    std::deque<Event> replay_;
    mutable std::mutex mu_;
};

// Index of the last checkpoint in an event stream, or npos when none.
std::size_t last_checkpoint_index(const std::vector<Event>& events);

} // namespace mleng
