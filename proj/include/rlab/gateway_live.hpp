#pragma once

// OpenAI-compatible chat-completions backend over HTTP(S).

#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "rlab/gateway.hpp"

namespace rlab::gateway {

struct LiveOptions {
    std::string endpoint = "https://api.openai.com/v1";  // scheme://host[:port][/prefix]
    std::string api_key_env = "OPENAI_API_KEY";
    double timeout_seconds = 60.0;
};

struct ParsedEndpoint {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path prefix without trailing slash
};

inline ParsedEndpoint parse_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("gateway.endpoint", "missing scheme in '" + url + "'");
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https")
        throw ConfigError("gateway.endpoint", "scheme must be http or https");
    const auto path_start = url.find('/', scheme_end + 3);
    ParsedEndpoint p;
    p.origin = url.substr(0, path_start);
    if (path_start != std::string::npos) p.prefix = url.substr(path_start);
    while (!p.prefix.empty() && p.prefix.back() == '/') p.prefix.pop_back();
    if (p.origin.size() <= scheme_end + 3) throw ConfigError("gateway.endpoint", "missing host");
    return p;
}

class LiveBackend : public Backend {
public:
    explicit LiveBackend(LiveOptions options) : options_(std::move(options)), endpoint_(parse_endpoint(options_.endpoint)) {
        const char* key = std::getenv(options_.api_key_env.c_str());
        if (!key || !*key)
            throw ConfigError("gateway.api_key_env", "environment variable " + options_.api_key_env + " is not set");
        api_key_ = key;
    }

    /// Key passed directly (tests).
    LiveBackend(LiveOptions options, std::string api_key)
        : options_(std::move(options)), endpoint_(parse_endpoint(options_.endpoint)), api_key_(std::move(api_key)) {}

    bool networked() const override { return true; }

    ChatResponse complete(const ChatRequest& request) override {
        nlohmann::json messages = nlohmann::json::array();
        for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
        nlohmann::json body{{"model", request.model},
                            {"messages", messages},
                            {"temperature", request.temperature},
                            {"top_p", request.top_p},
                            {"max_tokens", request.max_tokens}};
        if (request.structured) body["response_format"] = {{"type", "json_object"}};

        httplib::Client client(endpoint_.origin);
        const auto timeout = std::chrono::duration<double>(options_.timeout_seconds);
        client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        const httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};

        const auto start = std::chrono::steady_clock::now();
        auto res = client.Post(endpoint_.prefix + "/chat/completions", headers, body.dump(), "application/json");
        const double latency =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        if (!res) throw RetryableError(0, "HTTP request failed: " + httplib::to_string(res.error()));
        if (res->status == 429 || res->status >= 500)
            throw RetryableError(res->status, "HTTP " + std::to_string(res->status));
        if (res->status != 200)
            throw ProtocolError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500));

        try {
            const auto j = nlohmann::json::parse(res->body);
            const auto& choice = j.at("choices").at(0);
            ChatResponse out;
            const auto& content = choice.at("message").at("content");
            out.content = content.is_null() ? std::string() : content.get<std::string>();
            out.finish_reason = choice.value("finish_reason", "stop");
            if (j.contains("usage") && j["usage"].is_object()) {
                out.prompt_tokens = j["usage"].value("prompt_tokens", 0);
                out.completion_tokens = j["usage"].value("completion_tokens", 0);
            }
            out.latency_ms = latency;
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("malformed chat-completions response: ") + e.what());
        }
    }

private:
    LiveOptions options_;
    ParsedEndpoint endpoint_;
    std::string api_key_;
};

} // namespace rlab::gateway
