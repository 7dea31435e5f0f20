#include <fstream>
#include <sstream>
#include <thread>

#include "mleng/orchestrator.hpp"
#include "util.hpp"

namespace mleng {

using nlohmann::json;
namespace fs = std::filesystem;

std::filesystem::path default_prompts_dir() {
#ifdef MLENG_PROMPTS_DIR
    return MLENG_PROMPTS_DIR;
#else
    return "assets/prompts";
#endif
}

namespace {

int to_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' needs an integer, got '" + value + "'");
    }
}

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string word;
    while (in >> word) out.push_back(word);
    return out;
}

} // namespace

void EngineConfig::apply_kv(const std::string& key, const std::string& value) {
    if (key == "num_candidates") run.num_candidates = to_int(key, value);
    else if (key == "outer_steps") run.outer_steps = to_int(key, value);
    else if (key == "inner_steps") run.inner_steps = to_int(key, value);
    else if (key == "parallel_solutions") run.parallel_solutions = to_int(key, value);
    else if (key == "ensemble_rounds") run.ensemble_rounds = to_int(key, value);
    else if (key == "max_debug_rounds") run.max_debug_rounds = to_int(key, value);
    else if (key == "per_exec_timeout_s") run.per_exec_timeout = std::chrono::seconds(to_int(key, value));
    else if (key == "total_budget_s") run.total_budget = std::chrono::seconds(to_int(key, value));
    else if (key == "seed") run.seed = to_int(key, value);
    else if (key == "executor") executor = value;
    else if (key == "interpreter") interpreter = split_words(value);
    else if (key == "prompts_dir") prompts_dir = value;
    else if (key == "provider_url") provider_url = value;
    else if (key == "provider_model") provider_model = value;
    else if (key == "credential_env") credential_env = value;
    else if (key == "retriever_url") retriever_url = value;
    else if (key == "retriever_model") retriever_model = value;
    else if (key == "retry_budget") retry_budget = to_int(key, value);
    else if (key == "backoff_ms") backoff_ms = to_int(key, value);
    else if (key == "pool_size") pool_size = to_int(key, value);
    else if (key == "supervision_slack_s") supervision_slack_s = to_int(key, value);
    else if (key == "halt_after") halt_after = value;
    else if (detail::starts_with(key, "ablation_override.")) {
        ablation_overrides[to_int(key, key.substr(18))] = value;
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

void EngineConfig::apply_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in.is_open()) throw ConfigError("cannot read config file: " + file.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(file.string() + ":" + std::to_string(line_no) +
                              ": expected key=value");
        apply_kv(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
}

void EngineConfig::validate() const {
    run.validate();
    if (executor != "process" && executor != "scripted")
        throw ConfigError("executor must be 'process' or 'scripted', got '" + executor + "'");
    if (interpreter.empty()) throw ConfigError("interpreter command is empty");
    if (retry_budget < 1) throw ConfigError("retry_budget must be >= 1");
    if (backoff_ms < 0) throw ConfigError("backoff_ms must be >= 0");
    if (supervision_slack_s < 0) throw ConfigError("supervision_slack_s must be >= 0");
}

json EngineConfig::to_json() const {
    json overrides = json::object();
    for (const auto& [step, text] : ablation_overrides)
        overrides[std::to_string(step)] = text;
    return {{"num_candidates", run.num_candidates},
            {"outer_steps", run.outer_steps},
            {"inner_steps", run.inner_steps},
            {"parallel_solutions", run.parallel_solutions},
            {"ensemble_rounds", run.ensemble_rounds},
            {"max_debug_rounds", run.max_debug_rounds},
            {"per_exec_timeout_s", run.per_exec_timeout.count()},
            {"total_budget_s", run.total_budget.count()},
            {"seed", run.seed},
            {"mock_dir", mock_dir.string()},
            {"executor", executor},
            {"interpreter", interpreter},
            {"prompts_dir", prompts_dir.string()},
            {"provider_url", provider_url},
            {"provider_model", provider_model},
            {"credential_env", credential_env},
            {"retriever_url", retriever_url},
            {"retriever_model", retriever_model},
            {"retry_budget", retry_budget},
            {"backoff_ms", backoff_ms},
            {"pool_size", pool_size},
            {"supervision_slack_s", supervision_slack_s},
            {"halt_after", halt_after},
            {"ablation_overrides", overrides}};
}

EngineConfig EngineConfig::from_json(const json& j) {
    EngineConfig c;
    c.run.num_candidates = j.at("num_candidates").get<int>();
    c.run.outer_steps = j.at("outer_steps").get<int>();
    c.run.inner_steps = j.at("inner_steps").get<int>();
    c.run.parallel_solutions = j.at("parallel_solutions").get<int>();
    c.run.ensemble_rounds = j.at("ensemble_rounds").get<int>();
    c.run.max_debug_rounds = j.at("max_debug_rounds").get<int>();
    c.run.per_exec_timeout = std::chrono::seconds(j.at("per_exec_timeout_s").get<long>());
    c.run.total_budget = std::chrono::seconds(j.at("total_budget_s").get<long>());
    c.run.seed = j.at("seed").get<std::int64_t>();
    c.mock_dir = j.at("mock_dir").get<std::string>();
    c.executor = j.at("executor").get<std::string>();
    c.interpreter = j.at("interpreter").get<std::vector<std::string>>();
    c.prompts_dir = j.at("prompts_dir").get<std::string>();
    c.provider_url = j.at("provider_url").get<std::string>();
    c.provider_model = j.at("provider_model").get<std::string>();
    c.credential_env = j.at("credential_env").get<std::string>();
    c.retriever_url = j.at("retriever_url").get<std::string>();
    c.retriever_model = j.at("retriever_model").get<std::string>();
    c.retry_budget = j.at("retry_budget").get<int>();
    c.backoff_ms = j.at("backoff_ms").get<int>();
    c.pool_size = j.at("pool_size").get<int>();
    c.supervision_slack_s = j.at("supervision_slack_s").get<int>();
    c.halt_after = j.at("halt_after").get<std::string>();
    for (const auto& [step, text] : j.at("ablation_overrides").items())
        c.ablation_overrides[std::stoi(step)] = text.get<std::string>();
    return c;
}

EngineConfig scenario_config(const fs::path& scenario_dir) {
    EngineConfig config;
    config.mock_dir = scenario_dir;
    config.executor = "scripted";
    config.backoff_ms = 0;
    fs::path conf = scenario_dir / "scenario.conf";
    if (fs::exists(conf)) config.apply_file(conf);
    return config;
}

std::vector<ModelCard> load_injected_cards(const fs::path& task_dir) {
    fs::path file = task_dir / "cards.json";
    if (!fs::exists(file)) return {};
    std::ifstream in(file);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(file.string() + ": " + e.what());
    }
    if (!j.is_array()) throw ConfigError(file.string() + ": expected a JSON array of cards");
    std::vector<ModelCard> cards;
    for (const auto& item : j) {
        ModelCard card{item.at("model_name").get<std::string>(),
                       item.at("example_code").get<std::string>()};
        if (card.model_description.empty() || card.example_code.empty())
            throw ConfigError(file.string() + ": card fields must be non-empty");
        cards.push_back(std::move(card));
    }
    return cards;
}

} // namespace mleng
