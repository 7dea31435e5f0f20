#include "mleng/gateway.hpp"

#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "util.hpp"

namespace mleng {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(AgentRole role) {
    switch (role) {
        case AgentRole::Retriever: return "retriever";
        case AgentRole::Init: return "init";
        case AgentRole::Merger: return "merger";
        case AgentRole::Abl: return "abl";
        case AgentRole::Summarize: return "summarize";
        case AgentRole::Extractor: return "extractor";
        case AgentRole::Coder: return "coder";
        case AgentRole::Planner: return "planner";
        case AgentRole::EnsPlanner: return "ens_planner";
        case AgentRole::Ensembler: return "ensembler";
        case AgentRole::Debugger: return "debugger";
        case AgentRole::Leakage: return "leakage";
        case AgentRole::DataUsage: return "data_usage";
        case AgentRole::Test: return "test";
        case AgentRole::SubsampleExtractor: return "subsample_extractor";
        case AgentRole::SubsampleRemover: return "subsample_remover";
    }
    return "unknown";
}

std::vector<AgentRole> all_roles() {
    return {AgentRole::Retriever,  AgentRole::Init,      AgentRole::Merger,
            AgentRole::Abl,        AgentRole::Summarize, AgentRole::Extractor,
            AgentRole::Coder,      AgentRole::Planner,   AgentRole::EnsPlanner,
            AgentRole::Ensembler,  AgentRole::Debugger,  AgentRole::Leakage,
            AgentRole::DataUsage,  AgentRole::Test,      AgentRole::SubsampleExtractor,
            AgentRole::SubsampleRemover};
}

// --- templates --------------------------------------------------------------

std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings) {
    for (const auto& name : tmpl.required)
        if (!bindings.count(name))
            throw MissingBinding("prompt for role '" + std::string(to_string(tmpl.role)) +
                                 "' is missing binding '" + name + "'");

    const std::string& body = tmpl.body;
    std::string out;
    out.reserve(body.size());
    std::size_t i = 0;
    while (i < body.size()) {
        if (body[i] == '{') {
            auto close = body.find('}', i + 1);
            if (close != std::string::npos) {
                std::string name = body.substr(i + 1, close - i - 1);
                auto it = bindings.find(name);
                if (it != bindings.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += body[i];
        ++i;
    }
    return out;
}

namespace {

PromptTemplate parse_template(AgentRole role, const std::string& text,
                              const fs::path& file) {
    PromptTemplate tmpl;
    tmpl.role = role;
    std::string body = text;
    if (detail::starts_with(text, "requires:")) {
        auto nl = text.find('\n');
        std::string header = text.substr(9, nl == std::string::npos ? std::string::npos
                                                                    : nl - 9);
        std::istringstream names(header);
        std::string name;
        while (names >> name) {
            if (!name.empty() && name.back() == ',') name.pop_back();
            if (!name.empty()) tmpl.required.insert(name);
        }
        body = nl == std::string::npos ? "" : text.substr(nl + 1);
        while (!body.empty() && body.front() == '\n') body.erase(body.begin());
    }
    tmpl.body = body;
    for (const auto& name : tmpl.required)
        if (tmpl.body.find("{" + name + "}") == std::string::npos)
            throw ConfigError(file.string() + ": declared placeholder '{" + name +
                              "}' does not appear in the template body");
    return tmpl;
}

std::string slurp(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in.is_open()) throw ConfigError("cannot read template: " + file.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

} // namespace

TemplateSet TemplateSet::load(const fs::path& dir) {
    TemplateSet set;
    for (AgentRole role : all_roles()) {
        fs::path file = dir / (std::string(to_string(role)) + ".txt");
        if (!fs::exists(file))
            throw ConfigError("missing prompt template for role '" +
                              std::string(to_string(role)) + "': " + file.string());
        set.templates_[role] = parse_template(role, slurp(file), file);
    }
    fs::path fix = dir / "leakage_fix.txt";
    if (!fs::exists(fix))
        throw ConfigError("missing prompt template: " + fix.string());
    set.leakage_fix_ = parse_template(AgentRole::Leakage, slurp(fix), fix);
    return set;
}

const PromptTemplate& TemplateSet::at(AgentRole role) const {
    return templates_.at(role);
}

// --- mock provider ----------------------------------------------------------

std::vector<std::string> MockProvider::parse_transcript(const std::string& text) {
    std::vector<std::string> records;
    std::vector<std::string> current;
    auto flush = [&] {
        std::string rec = detail::join(current, "\n");
        current.clear();
        records.push_back(rec);
    };
    for (const auto& line : detail::split_lines(text)) {
        if (line == "@@@")
            flush();
        else
            current.push_back(line);
    }
    if (!current.empty()) flush();
    // A whitespace-only final section is file-formatting slack, not a record.
    if (!records.empty() && detail::trim(records.back()).empty()) records.pop_back();
    return records;
}

MockProvider::MockProvider(const fs::path& transcript_dir) {
    for (AgentRole role : all_roles()) {
        fs::path file = transcript_dir / (std::string(to_string(role)) + ".txt");
        if (!fs::exists(file)) continue;
        std::ifstream in(file, std::ios::binary);
        std::ostringstream text;
        text << in.rdbuf();
        transcripts_[role] = parse_transcript(text.str());
    }
}

MockProvider::MockProvider(std::map<AgentRole, std::vector<std::string>> transcripts)
    : transcripts_(std::move(transcripts)) {}

std::string MockProvider::complete(AgentRole role, const std::string&, std::uint64_t) {
    std::lock_guard<std::mutex> lock(mu_);
    auto& cursor = cursor_[role];
    auto it = transcripts_.find(role);
    if (it == transcripts_.end() || cursor >= it->second.size())
        throw ProviderUnavailable("mock transcript for role '" +
                                  std::string(to_string(role)) + "' is exhausted");
    const std::string& record = it->second[cursor++];
    if (record == "<<UNAVAILABLE>>")
        throw ProviderUnavailable("scripted provider failure for role '" +
                                  std::string(to_string(role)) + "'");
    if (record == "<<EMPTY>>") return "";
    return record;
}

void MockProvider::advance(AgentRole role, std::size_t n) {
    std::lock_guard<std::mutex> lock(mu_);
    cursor_[role] += n;
}

std::size_t MockProvider::remaining(AgentRole role) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = transcripts_.find(role);
    if (it == transcripts_.end()) return 0;
    auto cur = cursor_.find(role);
    std::size_t used = cur == cursor_.end() ? 0 : cur->second;
    return used >= it->second.size() ? 0 : it->second.size() - used;
}

// --- gateway ----------------------------------------------------------------

Gateway::Gateway(const TemplateSet& templates, Provider& provider, Journal& journal,
                 GatewayOptions opts)
    : templates_(&templates), provider_(&provider), journal_(&journal),
      opts_(opts) {}

std::string Gateway::render(AgentRole role, const Bindings& bindings) const {
    return render_prompt(templates_->at(role), bindings);
}

std::string Gateway::invoke(AgentRole role, const std::string& prompt) {
    std::string last_error;
    for (int attempt = 1; attempt <= opts_.retry_budget; ++attempt) {
        // Resumed runs replay recorded attempts instead of re-asking the provider.
        if (journal_->replaying()) {
            Event rec = journal_->replay_agent_call(to_string(role));
            bool failed = rec.data.value("failed", false);
            std::string response = rec.data.at("response").get<std::string>();
            if (!failed && !response.empty()) return response;
            last_error = failed ? "provider unavailable (replayed)" : "empty response";
            continue;
        }

        std::string response;
        bool failed = false;
        auto start = std::chrono::steady_clock::now();
        try {
            response = provider_->complete(role, prompt, opts_.sampling_seed);
        } catch (const ProviderUnavailable& e) {
            failed = true;
            last_error = e.what();
        }
        auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        journal_->agent_call(to_string(role), attempt, opts_.sampling_seed,
                             static_cast<long>(wall.count()), prompt, response, failed);
        if (!failed && !response.empty()) return response;
        if (!failed) last_error = "empty response";
        if (attempt < opts_.retry_budget && opts_.backoff.count() > 0)
            std::this_thread::sleep_for(opts_.backoff * (1 << (attempt - 1)));
    }
    if (last_error == "empty response")
        throw EmptyResponse("role '" + std::string(to_string(role)) + "' returned an empty response " +
                            std::to_string(opts_.retry_budget) + " times");
    throw ProviderUnavailable("role '" + std::string(to_string(role)) + "' failed after " +
                              std::to_string(opts_.retry_budget) + " attempts: " + last_error);
}

std::string Gateway::invoke_role(AgentRole role, const Bindings& bindings) {
    return invoke(role, render(role, bindings));
}

// --- structured output ------------------------------------------------------

namespace {

// Pulls a JSON value out of a response that may wrap it in prose or fences.
json find_json(const std::string& response, const char open, const char close) {
    auto try_parse = [](const std::string& text) -> std::optional<json> {
        try {
            return json::parse(text);
        } catch (const json::exception&) {
            return std::nullopt;
        }
    };
    if (auto j = try_parse(detail::trim(response))) return *j;
    if (auto j = try_parse(extract_script(response))) return *j;
    auto b = response.find(open);
    auto e = response.rfind(close);
    if (b != std::string::npos && e != std::string::npos && e > b)
        if (auto j = try_parse(response.substr(b, e - b + 1))) return *j;
    throw MalformedStructuredOutput("response does not contain parsable JSON");
}

} // namespace

std::vector<ModelCard> parse_model_cards(const std::string& response, int expected) {
    json j = find_json(response, '[', ']');
    if (!j.is_array())
        throw MalformedStructuredOutput("expected a JSON array of model cards");
    std::vector<ModelCard> cards;
    for (const auto& item : j) {
        if (!item.is_object() || !item.contains("model_name") ||
            !item.contains("example_code") || !item["model_name"].is_string() ||
            !item["example_code"].is_string())
            throw MalformedStructuredOutput(
                "each model card needs string fields model_name and example_code");
        ModelCard card{item["model_name"].get<std::string>(),
                       item["example_code"].get<std::string>()};
        if (card.model_description.empty() || card.example_code.empty())
            throw MalformedStructuredOutput("model card fields must be non-empty");
        cards.push_back(std::move(card));
    }
    if (static_cast<int>(cards.size()) != expected)
        throw WrongCardCount("expected " + std::to_string(expected) + " model cards, got " +
                             std::to_string(cards.size()));
    return cards;
}

std::string serialize_model_cards(const std::vector<ModelCard>& cards) {
    json j = json::array();
    for (const auto& card : cards)
        j.push_back({{"model_name", card.model_description},
                     {"example_code", card.example_code}});
    return j.dump(2);
}

std::string extract_script(const std::string& response) {
    auto lines = detail::split_lines(response);
    std::vector<std::pair<std::size_t, std::size_t>> regions; // [open+1, close)
    std::optional<std::size_t> open;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string t = detail::trim(lines[i]);
        if (detail::starts_with(t, "```")) {
            if (!open)
                open = i;
            else {
                regions.emplace_back(*open + 1, i);
                open.reset();
            }
        }
    }
    // An unterminated final fence still counts: agents get truncated.
    if (open) regions.emplace_back(*open + 1, lines.size());
    if (regions.empty()) return detail::trim(response);
    auto [b, e] = regions.back();
    std::vector<std::string> body(lines.begin() + static_cast<long>(b),
                                  lines.begin() + static_cast<long>(e));
    return detail::join(body, "\n");
}

} // namespace mleng
