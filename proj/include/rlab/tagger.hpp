#pragma once

// Feature tagging through one structured model call, plus a repeat-run
// stability audit.

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rlab/features.hpp"
#include "rlab/gateway.hpp"
#include "rlab/models.hpp"
#include "rlab/prompts.hpp"

namespace rlab {

inline gateway::ChatRequest tagger_request(std::string_view query, const ModelCall& call, int sample_index = 0) {
    gateway::ChatRequest req;
    req.model = call.model;
    req.temperature = call.temperature;
    req.top_p = call.top_p;
    req.max_tokens = call.max_tokens;
    req.structured = true;
    req.purpose = gateway::Purpose::Tagger;
    req.sample_index = sample_index;
    req.messages = {{"system", prompts::tagger_system()}, {"user", prompts::tagger_user(query)}};
    return req;
}

namespace detail {

inline std::optional<bool> lenient_bool(const nlohmann::json& v) {
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_number_integer()) {
        const auto i = v.get<long long>();
        if (i == 0 || i == 1) return i == 1;
        return std::nullopt;
    }
    if (v.is_string()) {
        std::string s = v.get<std::string>();
        for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (s == "true" || s == "yes" || s == "1") return true;
        if (s == "false" || s == "no" || s == "0") return false;
    }
    return std::nullopt;
}

inline ContextVector features_from_object(const nlohmann::json& obj, bool lenient) {
    if (!obj.is_object()) throw ProtocolError("tagger response is not a JSON object");
    ContextVector v;
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        const std::string name(kFeatureSchema[i].name);
        if (!obj.contains(name)) throw ProtocolError("tagger response is missing feature '" + name + "'");
        const auto& val = obj.at(name);
        std::optional<bool> b = val.is_boolean() ? std::optional<bool>(val.get<bool>()) : std::nullopt;
        if (!b && lenient) b = lenient_bool(val);
        if (!b) throw ProtocolError("tagger value for feature '" + name + "' is not a boolean");
        v.features[i] = *b;
    }
    return v;
}

} // namespace detail

/// Strict JSON parse first; on malformed JSON, one lenient reparse that
/// takes the outermost {...} span (dropping code fences or chatter) and
/// accepts 0/1 and yes/no values. A missing key is never repaired.
inline ContextVector parse_tagger_response(std::string_view content) {
    try {
        return detail::features_from_object(nlohmann::json::parse(content), false);
    } catch (const nlohmann::json::exception&) {
    } catch (const ProtocolError& e) {
        if (std::string_view(e.what()).find("missing feature") != std::string_view::npos) throw;
    }
    const auto open = content.find('{');
    const auto close = content.rfind('}');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open)
        throw ProtocolError("tagger response contains no JSON object");
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(content.substr(open, close - open + 1));
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("tagger response is not valid JSON: ") + e.what());
    }
    return detail::features_from_object(obj, true);
}

inline ContextVector tag_features(std::string_view query, gateway::Gateway& gw, const ModelCall& call,
                                  int sample_index = 0) {
    const auto resp = gw.chat(tagger_request(query, call, sample_index));
    return parse_tagger_response(resp.content);
}

/// JSON object with one boolean per feature, in schema order.
inline nlohmann::ordered_json features_to_json(const ContextVector& v) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < kNumFeatures; ++i) j[std::string(kFeatureSchema[i].name)] = v.features[i];
    return j;
}

struct StabilityReport {
    std::array<double, kNumFeatures> per_feature{};
    double full_vector = 0.0;
    std::size_t n_runs = 0;
    ContextVector modal;
};

/// Agreement of each run with the modal vector. Ties between equally
/// frequent vectors go to the lexicographically smallest bit string.
inline StabilityReport stability_from_runs(const std::vector<ContextVector>& runs) {
    require(runs.size() >= 2, "stability audit needs at least two runs");
    std::map<std::string, std::size_t> counts;
    for (const auto& r : runs) ++counts[r.bits()];
    std::string modal_bits;
    std::size_t best = 0;
    for (const auto& [bits, n] : counts) {
        if (n > best) {  // map order visits smaller strings first, so ties keep the smallest
            best = n;
            modal_bits = bits;
        }
    }
    StabilityReport rep;
    rep.n_runs = runs.size();
    rep.modal = ContextVector::from_bits(modal_bits, runs.front().bias);
    const double n = static_cast<double>(runs.size());
    std::size_t full = 0;
    for (const auto& r : runs) {
        if (r.features == rep.modal.features) ++full;
        for (std::size_t i = 0; i < kNumFeatures; ++i)
            if (r.features[i] == rep.modal.features[i]) rep.per_feature[i] += 1.0;
    }
    for (double& p : rep.per_feature) p /= n;
    rep.full_vector = static_cast<double>(full) / n;
    return rep;
}

/// Tags the query n_runs times; repeats are distinguished by sample index so
/// a replay cache keeps each run's response.
inline StabilityReport stability_audit(std::string_view query, std::size_t n_runs, gateway::Gateway& gw,
                                       const ModelCall& call) {
    require(n_runs >= 2, "stability audit needs at least two runs");
    std::vector<ContextVector> runs;
    for (std::size_t k = 0; k < n_runs; ++k) runs.push_back(tag_features(query, gw, call, static_cast<int>(k)));
    return stability_from_runs(runs);
}

} // namespace rlab
