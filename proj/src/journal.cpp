#include "mleng/journal.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fstream>

namespace mleng {

using nlohmann::json;

json Event::to_json() const {
    json j;
    j["v"] = schema;
    j["seq"] = seq;
    j["type"] = type;
    j["data"] = data;
    return j;
}

Event Event::from_json(const json& j) {
    Event e;
    e.schema = j.at("v").get<int>();
    e.seq = j.at("seq").get<std::uint64_t>();
    e.type = j.at("type").get<std::string>();
    e.data = j.at("data");
    return e;
}

Journal::Journal(std::filesystem::path file, std::uint64_t resume_after_seq)
    : path_(std::move(file)), seq_(resume_after_seq) {
    std::filesystem::create_directories(path_.parent_path());
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd_ < 0) throw ConfigError("cannot open journal for append: " + path_.string());
}

Journal::~Journal() {
    if (fd_ >= 0) ::close(fd_);
}

void Journal::set_replay_tail(std::deque<Event> tail) {
    std::lock_guard<std::mutex> lock(mu_);
    replay_ = std::move(tail);
}

bool Journal::replaying() const {
    std::lock_guard<std::mutex> lock(mu_);
    return !replay_.empty();
}

std::string Journal::replay_peek_type() const {
    std::lock_guard<std::mutex> lock(mu_);
    return replay_.empty() ? std::string() : replay_.front().type;
}

std::optional<Event> Journal::consume_for(const std::string& type) {
    // caller holds mu_
    if (replay_.empty()) return std::nullopt;
    Event e = replay_.front();
    if (e.type != type)
        throw CorruptJournal("replay mismatch: journal has '" + e.type +
                             "' where the rerun produced '" + type + "' (seq " +
                             std::to_string(e.seq) + " in " + path_.string() + ")");
    replay_.pop_front();
    return e;
}

Event Journal::replay_agent_call(const std::string& role) {
    std::lock_guard<std::mutex> lock(mu_);
    auto e = consume_for("agent_call");
    if (!e) throw CorruptJournal("replay_agent_call called while live");
    if (e->data.at("role").get<std::string>() != role)
        throw CorruptJournal("replay mismatch: journaled agent call is for role '" +
                             e->data.at("role").get<std::string>() +
                             "', rerun asked for '" + role + "'");
    return *e;
}

Event Journal::replay_execution(const std::string& script_sha) {
    std::lock_guard<std::mutex> lock(mu_);
    auto e = consume_for("execution");
    if (!e) throw CorruptJournal("replay_execution called while live");
    if (e->data.at("script_sha").get<std::string>() != script_sha)
        throw CorruptJournal("replay mismatch: journaled execution ran a different script");
    return *e;
}

void Journal::write_line(const Event& e, bool sync) {
    std::string line = e.to_json().dump();
    line += '\n';
    ssize_t n = ::write(fd_, line.data(), line.size());
    if (n != static_cast<ssize_t>(line.size()))
        throw ConfigError("journal write failed: " + path_.string());
    if (sync) ::fsync(fd_);
}

void Journal::append(Event e) {
    std::lock_guard<std::mutex> lock(mu_);
    if (!replay_.empty()) {
        auto rec = consume_for(e.type);
        (void)rec; // verified by type; recorded line already on disk
        return;
    }
    e.seq = ++seq_;
    write_line(e, e.type == "checkpoint");
}

void Journal::agent_call(const std::string& role, int attempt, std::uint64_t seed,
                         long wall_ms, const std::string& prompt,
                         const std::string& response, bool failed) {
    Event e;
    e.type = "agent_call";
    e.data = {{"role", role},       {"attempt", attempt}, {"seed", seed},
              {"wall_ms", wall_ms}, {"prompt", prompt},   {"response", response},
              {"failed", failed}};
    append(std::move(e));
}

void Journal::execution(int exec_id, const std::string& script_sha, int exit_status,
                        bool timed_out, long duration_ms) {
    Event e;
    e.type = "execution";
    e.data = {{"exec_id", exec_id},
              {"script_sha", script_sha},
              {"exit_status", exit_status},
              {"timed_out", timed_out},
              {"duration_ms", duration_ms}};
    append(std::move(e));
}

void Journal::score(int exec_id, double value, Direction direction) {
    Event e;
    e.type = "score";
    e.data = {{"exec_id", exec_id}, {"value", value}, {"direction", to_string(direction)}};
    append(std::move(e));
}

void Journal::decision(const std::string& stage, const std::string& kind, json detail) {
    Event e;
    e.type = "decision";
    e.data = {{"stage", stage}, {"kind", kind}, {"detail", std::move(detail)}};
    append(std::move(e));
}

void Journal::note(const std::string& text, json data) {
    Event e;
    e.type = "note";
    e.data = {{"note", text}, {"data", std::move(data)}};
    append(std::move(e));
}

void Journal::checkpoint(const std::string& label, json state) {
    Event e;
    e.type = "checkpoint";
    e.data = {{"label", label}, {"state", std::move(state)}};
    append(std::move(e));
}

std::uint64_t Journal::last_seq() const {
    std::lock_guard<std::mutex> lock(mu_);
    return seq_;
}

std::vector<Event> Journal::read_file(const std::filesystem::path& file) {
    std::vector<Event> events;
    std::ifstream in(file);
    if (!in.is_open()) return events;
    std::string line;
    std::uint64_t expected = 1;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        Event e;
        try {
            e = Event::from_json(json::parse(line));
        } catch (const json::exception& ex) {
            throw CorruptJournal(file.string() + ":" + std::to_string(line_no) +
                                 ": unparsable journal line (" + ex.what() + ")");
        }
        if (e.schema != 1)
            throw CorruptJournal(file.string() + ": unsupported journal schema " +
                                 std::to_string(e.schema));
        if (e.seq != expected)
            throw CorruptJournal(file.string() + ":" + std::to_string(line_no) +
                                 ": sequence gap (expected " + std::to_string(expected) +
                                 ", found " + std::to_string(e.seq) + ")");
        ++expected;
        events.push_back(std::move(e));
    }
    return events;
}

std::size_t last_checkpoint_index(const std::vector<Event>& events) {
    for (std::size_t i = events.size(); i > 0; --i)
        if (events[i - 1].type == "checkpoint") return i - 1;
    return static_cast<std::size_t>(-1);
}

} // namespace mleng
