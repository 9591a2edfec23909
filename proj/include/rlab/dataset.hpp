#pragma once

// Dataset records (JSONL), the answerer call, and dataset construction with
// answerability and perturbation-validity filters.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlab/error.hpp"
#include "rlab/gateway.hpp"
#include "rlab/judge.hpp"
#include "rlab/models.hpp"
#include "rlab/prompts.hpp"
#include "rlab/random.hpp"
#include "rlab/reward.hpp"
#include "rlab/synthetic_env.hpp"

namespace rlab::data {

struct DatasetRecord {
    std::string id;
    std::string query;
    std::vector<std::string> references;
    std::vector<std::string> choices;
    prompts::Scenario scenario = prompts::Scenario::Abstractive;
    std::string context;
    /// Optional knobs for the synthetic backend (failing_perturbations,
    /// unanswerable, invalid_perturbations).
    nlohmann::json synthetic;

    void validate() const {
        if (id.empty()) throw ProtocolError("record has an empty id");
        if (query.empty()) throw ProtocolError("record '" + id + "' has an empty query");
        if (references.empty()) throw ProtocolError("record '" + id + "' needs at least one reference answer");
        const bool mc = scenario == prompts::Scenario::MultipleChoice;
        if (mc && choices.empty()) throw ProtocolError("record '" + id + "' is multiple-choice but has no choices");
        if (!mc && !choices.empty()) throw ProtocolError("record '" + id + "' has choices but is not multiple-choice");
    }
};

inline nlohmann::ordered_json to_json(const DatasetRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["query"] = r.query;
    j["references"] = r.references;
    if (!r.choices.empty()) j["choices"] = r.choices;
    j["scenario"] = std::string(prompts::scenario_name(r.scenario));
    if (!r.context.empty()) j["context"] = r.context;
    if (!r.synthetic.is_null()) j["synthetic"] = r.synthetic;
    return j;
}

inline DatasetRecord record_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ProtocolError("record is not a JSON object");
    auto need_string = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_string()) throw ProtocolError(std::string("missing string field '") + key + "'");
        return j[key].get<std::string>();
    };
    auto string_list = [&](const char* key) {
        std::vector<std::string> out;
        if (!j.contains(key)) return out;
        if (!j[key].is_array()) throw ProtocolError(std::string("field '") + key + "' must be an array of strings");
        for (const auto& v : j[key]) {
            if (!v.is_string()) throw ProtocolError(std::string("field '") + key + "' must be an array of strings");
            out.push_back(v.get<std::string>());
        }
        return out;
    };
    DatasetRecord r;
    r.id = j.contains("id") && j["id"].is_number_integer() ? std::to_string(j["id"].get<long long>()) : need_string("id");
    r.query = need_string("query");
    if (!j.contains("references")) throw ProtocolError("missing field 'references'");
    r.references = string_list("references");
    r.choices = string_list("choices");
    const std::string scen = j.contains("scenario") ? need_string("scenario") : std::string("abstractive");
    const auto s = prompts::scenario_from_name(scen);
    if (!s) throw ProtocolError("unknown scenario '" + scen + "'");
    r.scenario = *s;
    if (j.contains("context")) r.context = need_string("context");
    if (j.contains("synthetic")) r.synthetic = j["synthetic"];
    r.validate();
    return r;
}

/// Reads a JSONL dataset; blank lines are skipped, ids must be unique.
inline std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("dataset", "cannot open '" + path.string() + "'");
    std::vector<DatasetRecord> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto r = record_from_json(nlohmann::json::parse(line));
            if (!ids.insert(r.id).second) throw ProtocolError("duplicate id '" + r.id + "'");
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const ProtocolError& e) {
            throw ProtocolError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (out.empty()) throw ConfigError("dataset", "'" + path.string() + "' contains no records");
    return out;
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline env::SyntheticRecord synthetic_record(const DatasetRecord& r) {
    env::SyntheticRecord s;
    s.query = r.query;
    s.references = r.references;
    const auto& j = r.synthetic;
    if (j.is_object()) {
        s.failing_perturbations = j.value("failing_perturbations", std::size_t{0});
        s.unanswerable = j.value("unanswerable", false);
        if (j.contains("invalid_perturbations"))
            for (const auto& v : j["invalid_perturbations"]) s.invalid_perturbations.insert(v.get<std::size_t>());
    }
    return s;
}

inline std::vector<env::SyntheticRecord> synthetic_records(const std::vector<DatasetRecord>& records) {
    std::vector<env::SyntheticRecord> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(synthetic_record(r));
    return out;
}

// ---- answering -------------------------------------------------------------

inline gateway::ChatRequest answer_request(const DatasetRecord& r, std::string_view question, const ModelCall& call,
                                           int sample_index = 0) {
    gateway::ChatRequest req;
    req.model = call.model;
    req.temperature = call.temperature;
    req.top_p = call.top_p;
    req.max_tokens = call.max_tokens;
    req.purpose = gateway::Purpose::Answerer;
    req.sample_index = sample_index;
    req.messages = {{"system", std::string(prompts::answerer_system(r.scenario))},
                    {"user", prompts::answerer_user(r.scenario, question, r.choices, r.context)}};
    return req;
}

inline std::string answer_question(const DatasetRecord& r, std::string_view question, gateway::Gateway& gw,
                                   const ModelCall& call, int sample_index = 0) {
    return gateway::trim(gw.chat(answer_request(r, question, call, sample_index)).content);
}

// ---- dataset construction --------------------------------------------------

struct ConstructOptions {
    std::uint64_t seed = 0;
    /// Minimum unigram precision of a perturbation against the original.
    double min_overlap = 0.3;
    std::size_t min_incorrect = 1;
    std::size_t max_incorrect = 3;
};

struct PerturbationAudit {
    std::string text;
    bool equivalent = false;
    double overlap = 0.0;
    bool valid = false;
    int correct = -1;  // -1 when not answered
};

struct ConstructAudit {
    std::string id;
    std::string original;
    bool answerable = false;
    std::vector<PerturbationAudit> perturbations;
    std::size_t incorrect = 0;
    std::optional<std::size_t> chosen;
    std::string drop_reason;  // empty when kept
};

struct ConstructResult {
    std::vector<DatasetRecord> kept;
    std::vector<ConstructAudit> audit;
};

inline nlohmann::ordered_json to_json(const ConstructAudit& a) {
    nlohmann::ordered_json j;
    j["id"] = a.id;
    j["original"] = a.original;
    j["answerable"] = a.answerable;
    nlohmann::ordered_json ps = nlohmann::ordered_json::array();
    for (const auto& p : a.perturbations) {
        nlohmann::ordered_json pj;
        pj["text"] = p.text;
        pj["equivalent"] = p.equivalent;
        pj["overlap"] = p.overlap;
        pj["valid"] = p.valid;
        if (p.correct >= 0) pj["correct"] = p.correct == 1;
        ps.push_back(pj);
    }
    j["perturbations"] = ps;
    j["incorrect"] = a.incorrect;
    if (a.chosen) j["chosen"] = *a.chosen;
    j["kept"] = a.drop_reason.empty();
    if (!a.drop_reason.empty()) j["drop_reason"] = a.drop_reason;
    return j;
}

inline gateway::ChatRequest perturb_request(std::string_view query, const ModelCall& call) {
    gateway::ChatRequest req;
    req.model = call.model;
    req.temperature = call.temperature;
    req.top_p = call.top_p;
    req.max_tokens = call.max_tokens;
    req.purpose = gateway::Purpose::Perturber;
    req.structured = true;
    req.messages = {{"system", std::string(prompts::kPerturbSystem)}, {"user", prompts::perturb_user(query)}};
    return req;
}

inline std::vector<std::string> parse_perturbations(std::string_view content) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(content);
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("perturbation response is not JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("perturbations") || !j["perturbations"].is_array())
        throw ProtocolError("perturbation response lacks a 'perturbations' array");
    std::vector<std::string> out;
    for (const auto& v : j["perturbations"]) {
        if (!v.is_string()) throw ProtocolError("perturbation entries must be strings");
        out.push_back(gateway::trim(v.get<std::string>()));
    }
    if (out.size() != prompts::kNumPerturbations)
        throw ProtocolError("expected " + std::to_string(prompts::kNumPerturbations) + " perturbations, got " +
                            std::to_string(out.size()));
    return out;
}

inline gateway::ChatRequest equivalence_request(std::string_view original, std::string_view perturbed,
                                                const ModelCall& call) {
    gateway::ChatRequest req;
    req.model = call.model;
    req.temperature = call.temperature;
    req.top_p = call.top_p;
    req.max_tokens = call.max_tokens;
    req.purpose = gateway::Purpose::Equivalence;
    req.messages = {{"system", std::string(prompts::kEquivalenceSystem)},
                    {"user", prompts::equivalence_user(original, perturbed)}};
    return req;
}

/// Applies both construction filters to one source record.
inline ConstructAudit construct_one(const DatasetRecord& src, gateway::Gateway& gw, const ModelSettings& models,
                                    const ConstructOptions& opt) {
    ConstructAudit a;
    a.id = src.id;
    a.original = src.query;

    const std::string ans = answer_question(src, src.query, gw, models.answerer);
    a.answerable = judge(src.query, src.references, ans, gw, models.judge).correct == 1;
    if (!a.answerable) {
        a.drop_reason = "answerability";
        return a;
    }

    const auto texts = parse_perturbations(gw.chat(perturb_request(src.query, models.perturber)).content);
    bool all_valid = true;
    for (const auto& t : texts) {
        PerturbationAudit p;
        p.text = t;
        p.equivalent = parse_binary_label(gw.chat(equivalence_request(src.query, t, models.judge)).content,
                                          "EQUIVALENT", "NOT_EQUIVALENT") == 1;
        p.overlap = reward::bleu1(t, src.query);
        p.valid = p.equivalent && p.overlap >= opt.min_overlap && t != src.query;
        all_valid = all_valid && p.valid;
        a.perturbations.push_back(std::move(p));
    }
    if (!all_valid) {
        a.drop_reason = "perturbation-invalid";
        return a;
    }

    for (auto& p : a.perturbations) {
        const std::string pa = answer_question(src, p.text, gw, models.answerer);
        p.correct = judge(p.text, src.references, pa, gw, models.judge).correct;
        if (p.correct == 0) ++a.incorrect;
    }
    if (a.incorrect < opt.min_incorrect || a.incorrect > opt.max_incorrect) {
        a.drop_reason = std::to_string(a.incorrect) + " incorrect";
        return a;
    }
    Rng rng(derive_seed(opt.seed, "construct/" + src.id));
    a.chosen = rng.index(a.perturbations.size());
    return a;
}

inline ConstructResult construct_dataset(const std::vector<DatasetRecord>& source, gateway::Gateway& gw,
                                         const ModelSettings& models, const ConstructOptions& opt = {}) {
    require(opt.min_incorrect <= opt.max_incorrect, "incorrect-count bounds are inverted");
    ConstructResult out;
    for (const auto& src : source) {
        auto a = construct_one(src, gw, models, opt);
        if (a.chosen) {
            DatasetRecord r = src;
            r.query = a.perturbations[*a.chosen].text;
            out.kept.push_back(std::move(r));
        }
        out.audit.push_back(std::move(a));
    }
    return out;
}

} // namespace rlab::data
