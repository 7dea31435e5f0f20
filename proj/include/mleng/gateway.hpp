#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "mleng/core.hpp"
#include "mleng/errors.hpp"
#include "mleng/journal.hpp"

namespace mleng {

enum class AgentRole {
    Retriever,
    Init,
    Merger,
    Abl,
    Summarize,
    Extractor,
    Coder,
    Planner,
    EnsPlanner,
    Ensembler,
    Debugger,
    Leakage,
    DataUsage,
    Test,
    SubsampleExtractor,
    SubsampleRemover,
};

const char* to_string(AgentRole role);
std::vector<AgentRole> all_roles();

// A retrieved (description, example code) pair used to seed one candidate.
struct ModelCard {
    std::string model_description;
    std::string example_code;
};

using Bindings = std::map<std::string, std::string>;

struct PromptTemplate {
    AgentRole role = AgentRole::Retriever;
    std::string body;
    std::set<std::string> required;
};

// Deterministic {name} substitution. Placeholders that are neither bound
// nor required stay literal; a required placeholder without a binding
// raises MissingBinding naming it.
std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings);

// One text asset per role, loaded from a directory of <role>.txt files.
// Format: an optional first line "requires: a b c" declaring the required
// placeholders, a blank line, then the body. The leakage role has a second
// asset, leakage_fix.txt, for its correction phase.
class TemplateSet {
public:
    static TemplateSet load(const std::filesystem::path& dir);

    const PromptTemplate& at(AgentRole role) const;
    const PromptTemplate& leakage_fix() const { return leakage_fix_; }

private:
    std::map<AgentRole, PromptTemplate> templates_;
    PromptTemplate leakage_fix_;
};

// Text-completion backend. Implementations must be safe for concurrent use.
class Provider {
public:
    virtual ~Provider() = default;
    // Returns the raw response text. May return empty (the gateway retries)
    // or throw ProviderUnavailable.
    virtual std::string complete(AgentRole role, const std::string& prompt,
                                 std::uint64_t sampling_seed) = 0;
};

// Replays per-role FIFO transcripts for deterministic runs. Transcript
// files are plain text records separated by a line containing exactly
// "@@@". A record of "<<EMPTY>>" replays as an empty response and
// "<<UNAVAILABLE>>" replays as a provider failure.
class MockProvider : public Provider {
public:
    explicit MockProvider(const std::filesystem::path& transcript_dir);
    explicit MockProvider(std::map<AgentRole, std::vector<std::string>> transcripts);

    std::string complete(AgentRole role, const std::string& prompt,
                         std::uint64_t sampling_seed) override;

    // Resume support: skip the first n responses of a role (already consumed
    // by the journaled part of the run).
    void advance(AgentRole role, std::size_t n);

    std::size_t remaining(AgentRole role) const;

    static std::vector<std::string> parse_transcript(const std::string& text);

private:
    std::map<AgentRole, std::vector<std::string>> transcripts_;
    std::map<AgentRole, std::size_t> cursor_;
    mutable std::mutex mu_;
};

// Minimal HTTP provider: POSTs {model, prompt, seed} as JSON to the
// configured endpoint with a bearer credential taken from the environment.
// The retriever role may use a separate (search-enabled) endpoint/model.
class HttpProvider : public Provider {
public:
    struct Options {
        std::string url;
        std::string model;
        std::string credential_env;
        std::string retriever_url;   // defaults to url
        std::string retriever_model; // defaults to model
    };

    explicit HttpProvider(Options opts);
    std::string complete(AgentRole role, const std::string& prompt,
                         std::uint64_t sampling_seed) override;

private:
    Options opts_;
};

struct GatewayOptions {
    int retry_budget = 3;
    std::chrono::milliseconds backoff{200};
    std::uint64_t sampling_seed = 0;
};

// Uniform access point for every agent role: renders prompts, invokes the
// provider with bounded retries, and journals each attempt before
// returning. When the journal is replaying a resumed run, recorded
// responses are served and the provider is not touched.
class Gateway {
public:
    Gateway(const TemplateSet& templates, Provider& provider, Journal& journal,
            GatewayOptions opts);

    const TemplateSet& templates() const { return *templates_; }
    const GatewayOptions& options() const { return opts_; }

    std::string render(AgentRole role, const Bindings& bindings) const;

    // Invoke with a pre-rendered prompt. Throws ProviderUnavailable or
    // EmptyResponse once the retry budget is exhausted.
    std::string invoke(AgentRole role, const std::string& prompt);

    // render + invoke
    std::string invoke_role(AgentRole role, const Bindings& bindings);

    // Invoke, parse, and on MalformedStructuredOutput/WrongCardCount
    // re-invoke with the parse error appended, up to the retry budget.
    template <typename Parser>
    auto invoke_structured(AgentRole role, const std::string& prompt, Parser parse)
        -> decltype(parse(std::string())) {
        std::string current = prompt;
        for (int round = 0;; ++round) {
            std::string response = invoke(role, current);
            try {
                return parse(response);
            } catch (const Error& e) {
                if (round + 1 >= opts_.retry_budget) throw;
                current = prompt +
                          "\n\nYour previous response could not be used: " + e.what() +
                          "\nRespond again following the required format exactly.";
            }
        }
    }

private:
    const TemplateSet* templates_;
    Provider* provider_;
    Journal* journal_;
    GatewayOptions opts_;
};

// Parses a structured model-card response: a JSON array of objects with
// non-empty "model_name" and "example_code" fields, possibly wrapped in
// prose or code fences. Throws MalformedStructuredOutput or WrongCardCount.
std::vector<ModelCard> parse_model_cards(const std::string& response, int expected);

// Serializes cards to the same JSON shape parse_model_cards accepts.
std::string serialize_model_cards(const std::vector<ModelCard>& cards);

// Returns the content of the last fenced code region, or the whole response
// trimmed when no fence is present. Total function.
std::string extract_script(const std::string& response);

} // namespace mleng
