#pragma once

// Model-graded correctness and the full reward computation for one answer.

#include <string>
#include <string_view>
#include <vector>

#include "rlab/gateway.hpp"
#include "rlab/models.hpp"
#include "rlab/prompts.hpp"
#include "rlab/reward.hpp"

namespace rlab {

struct Verdict {
    int correct = 0;
    std::string raw;
};

/// Accepts CORRECT / INCORRECT, case-insensitive, with surrounding
/// whitespace and trailing punctuation. Anything else is a protocol error.
inline int parse_binary_label(std::string_view raw, std::string_view yes, std::string_view no) {
    std::string s = gateway::trim(raw);
    while (!s.empty() && (s.back() == '.' || s.back() == '!')) s.pop_back();
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (s == yes) return 1;
    if (s == no) return 0;
    throw ProtocolError("unparseable verdict '" + std::string(raw.substr(0, 80)) + "', expected " + std::string(yes) +
                        " or " + std::string(no));
}

inline gateway::ChatRequest judge_request(std::string_view question, const std::vector<std::string>& references,
                                          std::string_view candidate, const ModelCall& call,
                                          int sample_index = 0) {
    gateway::ChatRequest req;
    req.model = call.model;
    req.temperature = call.temperature;
    req.top_p = call.top_p;
    req.max_tokens = call.max_tokens;
    req.purpose = gateway::Purpose::Judge;
    req.sample_index = sample_index;
    req.messages = {{"system", std::string(prompts::kJudgeSystem)},
                    {"user", prompts::judge_user(question, references, candidate)}};
    return req;
}

inline Verdict judge(std::string_view question, const std::vector<std::string>& references,
                     std::string_view candidate, gateway::Gateway& gw, const ModelCall& call,
                     int sample_index = 0) {
    require(!references.empty(), "judge needs at least one reference answer");
    const auto resp = gw.chat(judge_request(question, references, candidate, call, sample_index));
    return {parse_binary_label(resp.content, "CORRECT", "INCORRECT"), resp.content};
}

struct ScoredAnswer {
    reward::RewardBreakdown breakdown;
    Verdict verdict;
};

/// Judge call plus the two lexical scores (max over references).
inline ScoredAnswer score_answer(std::string_view question, const std::vector<std::string>& references,
                                 std::string_view answer, gateway::Gateway& gw, const ModelCall& judge_call,
                                 const reward::RewardWeights& weights, int sample_index = 0) {
    ScoredAnswer out;
    out.verdict = judge(question, references, answer, gw, judge_call, sample_index);
    const double fuzz = reward::best_over_references(
        answer, references, [](std::string_view c, std::string_view r) { return reward::fuzzy_token_set(c, r); });
    const double bleu = reward::best_over_references(
        answer, references, [](std::string_view c, std::string_view r) { return reward::bleu1(c, r); });
    out.breakdown = reward::composite_reward(out.verdict.correct, fuzz, bleu, weights);
    return out;
}

} // namespace rlab
