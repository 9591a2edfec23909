#pragma once

// Applies a rewrite arm to a query through the gateway.

#include <string>
#include <string_view>

#include "rlab/gateway.hpp"
#include "rlab/models.hpp"
#include "rlab/prompts.hpp"

namespace rlab {

struct RewriteResult {
    prompts::ArmId arm = prompts::ArmId::NoRewrite;
    std::string original;
    std::string rewritten;
    std::string raw_response;
};

/// Strips surrounding whitespace, a wrapping ``` fence and a leading
/// "Rewritten query:" label.
inline std::string sanitize_rewrite(std::string_view raw) {
    std::string s = gateway::trim(raw);
    if (s.starts_with("```")) {
        const auto first_nl = s.find('\n');
        s = first_nl == std::string::npos ? std::string() : s.substr(first_nl + 1);
        const auto close = s.rfind("```");
        if (close != std::string::npos) s.erase(close);
        s = gateway::trim(s);
    }
    constexpr std::string_view label = "rewritten query:";
    if (s.size() >= label.size()) {
        std::string head = s.substr(0, label.size());
        for (char& c : head) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (head == label) s = gateway::trim(std::string_view(s).substr(label.size()));
    }
    return s;
}

inline gateway::ChatRequest rewrite_request(prompts::ArmId arm, std::string_view query, const ModelCall& call,
                                            int sample_index = 0) {
    gateway::ChatRequest req;
    req.model = call.model;
    req.temperature = call.temperature;
    req.top_p = call.top_p;
    req.max_tokens = call.max_tokens;
    req.purpose = gateway::Purpose::Rewriter;
    req.sample_index = sample_index;
    req.messages = {{"system", prompts::render_prompt(arm, query)}, {"user", std::string(query)}};
    return req;
}

inline RewriteResult apply_rewrite(prompts::ArmId arm, std::string_view query, gateway::Gateway& gw,
                                   const ModelCall& call, int sample_index = 0) {
    RewriteResult out{arm, std::string(query), {}, {}};
    if (arm == prompts::ArmId::NoRewrite) {
        out.rewritten = out.original;
        return out;
    }
    const auto resp = gw.chat(rewrite_request(arm, query, call, sample_index));
    out.raw_response = resp.content;
    out.rewritten = sanitize_rewrite(resp.content);
    if (out.rewritten.empty())
        throw ProtocolError("empty rewrite from arm " + std::string(prompts::arm_name(arm)));
    return out;
}

} // namespace rlab
