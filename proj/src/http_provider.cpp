#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "mleng/gateway.hpp"

namespace mleng {

using nlohmann::json;

HttpProvider::HttpProvider(Options opts) : opts_(std::move(opts)) {
    if (opts_.url.empty()) throw ConfigError("provider url is not configured");
    if (opts_.retriever_url.empty()) opts_.retriever_url = opts_.url;
    if (opts_.retriever_model.empty()) opts_.retriever_model = opts_.model;
}

namespace {

// Accepts {"text": ...}, {"choices":[{"text": ...}]} and
// {"choices":[{"message":{"content": ...}}]} response shapes.
std::string response_text(const json& j) {
    if (j.contains("text") && j["text"].is_string()) return j["text"].get<std::string>();
    if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
        const auto& choice = j["choices"][0];
        if (choice.contains("text") && choice["text"].is_string())
            return choice["text"].get<std::string>();
        if (choice.contains("message") && choice["message"].contains("content") &&
            choice["message"]["content"].is_string())
            return choice["message"]["content"].get<std::string>();
    }
    throw ProviderUnavailable("provider response has no recognizable text field");
}

// Splits "https://host:port/path" into (scheme://host:port, /path).
std::pair<std::string, std::string> split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    auto path_start = url.find('/', host_start);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

std::string HttpProvider::complete(AgentRole role, const std::string& prompt,
                                   std::uint64_t sampling_seed) {
    bool retriever = role == AgentRole::Retriever;
    const std::string& url = retriever ? opts_.retriever_url : opts_.url;
    const std::string& model = retriever ? opts_.retriever_model : opts_.model;

    json body = {{"model", model}, {"prompt", prompt}, {"seed", sampling_seed}};

    auto [base, path] = split_url(url);
    httplib::Client client(base);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!opts_.credential_env.empty()) {
        const char* cred = std::getenv(opts_.credential_env.c_str());
        if (!cred)
            throw ProviderUnavailable("credential environment variable '" +
                                      opts_.credential_env + "' is not set");
        headers.emplace("Authorization", std::string("Bearer ") + cred);
    }
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res)
        throw ProviderUnavailable("provider request failed: " +
                                  httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw ProviderUnavailable("provider returned HTTP " + std::to_string(res->status));
    try {
        return response_text(json::parse(res->body));
    } catch (const json::exception& e) {
        throw ProviderUnavailable(std::string("provider response is not JSON: ") + e.what());
    }
}

} // namespace mleng
