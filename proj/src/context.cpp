#include "mleng/context.hpp"

namespace mleng {

using nlohmann::json;

BudgetClock::BudgetClock(std::chrono::seconds budget, std::chrono::seconds elapsed_offset)
    : start_(std::chrono::steady_clock::now() - elapsed_offset), budget_(budget) {}

bool BudgetClock::expired() const { return remaining() <= std::chrono::seconds{0}; }

std::chrono::seconds BudgetClock::remaining() const {
    auto elapsed = std::chrono::duration_cast<std::chrono::seconds>(
        std::chrono::steady_clock::now() - start_);
    return budget_ - elapsed;
}

std::optional<std::string> LeakageCache::lookup(std::uint64_t key) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    if (it == cache_.end()) return std::nullopt;
    return it->second;
}

void LeakageCache::store(std::uint64_t key, std::string result_script) {
    std::lock_guard<std::mutex> lock(mu_);
    cache_.emplace(key, std::move(result_script));
}

bool RunContext::out_of_budget() const {
    if (journal && journal->replaying()) return false;
    return budget && budget->expired();
}

void RunContext::check_halt() const {
    if (journal && journal->replaying()) return;
    if (stop && stop->requested()) throw Halted{"stop requested"};
}

std::string RunContext::checkpoint_scope() const {
    return pipeline_index > 0 ? "pipeline-" + std::to_string(pipeline_index) + "/" : "";
}

void RunContext::checkpoint(const std::string& label, json state) const {
    bool was_replaying = journal->replaying();
    journal->checkpoint(label, std::move(state));
    if (was_replaying || halt_after.empty()) return;
    std::string full = checkpoint_scope() + label;
    if (label == halt_after || full == halt_after) {
        if (stop) stop->request();
        throw Halted{full};
    }
}

json solution_to_json(const Solution& s) {
    json j;
    j["script"] = s.script;
    j["origin"] = to_string(s.origin);
    j["lineage"] = s.lineage;
    j["id"] = s.id;
    if (s.score) j["score"] = {{"value", s.score->value},
                               {"direction", to_string(s.score->direction)}};
    return j;
}

Solution solution_from_json(const json& j) {
    Solution s = make_solution(j.at("script").get<std::string>(),
                               origin_from_string(j.at("origin").get<std::string>()),
                               j.at("lineage").get<std::vector<std::string>>());
    if (j.contains("score"))
        s.score = ScoreRecord{j["score"].at("value").get<double>(),
                              direction_from_string(j["score"].at("direction").get<std::string>())};
    return s;
}

} // namespace mleng
