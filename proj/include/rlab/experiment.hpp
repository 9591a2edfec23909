#pragma once

// Experiment configuration, round logs, the online rewrite loop over a
// dataset, static baselines, and the environment-only simulator.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlab/bandit/policy.hpp"
#include "rlab/dataset.hpp"
#include "rlab/error.hpp"
#include "rlab/features.hpp"
#include "rlab/gateway.hpp"
#include "rlab/gateway_live.hpp"
#include "rlab/judge.hpp"
#include "rlab/metrics.hpp"
#include "rlab/models.hpp"
#include "rlab/prompts.hpp"
#include "rlab/random.hpp"
#include "rlab/reward.hpp"
#include "rlab/rewrite.hpp"
#include "rlab/synthetic_env.hpp"
#include "rlab/tagger.hpp"

namespace rlab::experiment {

inline constexpr int kLogSchemaVersion = 1;

enum class BackendMode { Synthetic, Live, Replay };

inline std::string_view backend_name(BackendMode m) {
    switch (m) {
    case BackendMode::Synthetic: return "synthetic";
    case BackendMode::Live: return "live";
    case BackendMode::Replay: return "replay";
    }
    return "synthetic";
}

// ---- configuration ---------------------------------------------------------

struct ExperimentConfig {
    bandit::PolicySpec policy{"ts_c", {}};
    std::vector<prompts::ArmId> arms = prompts::enabled_arms(false);
    reward::RewardWeights reward_weights;
    BackendMode backend = BackendMode::Synthetic;
    ModelSettings models;
    std::filesystem::path dataset;
    std::string dataset_name;  // defaults to the dataset file stem
    std::uint64_t rounds = 100;
    std::vector<std::uint64_t> seeds{0};
    double lambda = 0.1;
    bool evaluate_all_arms = false;
    std::filesystem::path output_dir = "runs";
    std::optional<std::filesystem::path> cache;
    bool strict_replay = false;
    bool resume = false;
    nlohmann::json env = {{"canonical", "context_dependent"}};
    double judge_flip_prob = 0.0;
    gateway::LiveOptions live;
    std::optional<std::pair<int, int>> rate_limit;
    bool bias = true;
    double max_failure_rate = 0.01;

    std::size_t dim() const noexcept { return kNumFeatures + (bias ? 1 : 0); }

    std::string resolved_dataset_name() const {
        return dataset_name.empty() ? dataset.stem().string() : dataset_name;
    }

    void validate() const {
        if (rounds < 1) throw ConfigError("rounds", "must be >= 1");
        if (seeds.empty()) throw ConfigError("seeds", "must not be empty");
        if (arms.empty()) throw ConfigError("arms", "at least one arm is required");
        for (std::size_t i = 0; i < arms.size(); ++i)
            for (std::size_t j = i + 1; j < arms.size(); ++j)
                if (arms[i] == arms[j]) throw ConfigError("arms", "arms must be distinct");
        reward_weights.validate();
        models.validate();
        if (!(lambda >= 0.0)) throw ConfigError("lambda", "must be >= 0");
        if (!(max_failure_rate >= 0.0 && max_failure_rate < 1.0))
            throw ConfigError("max_failure_rate", "must lie in [0, 1)");
        if (!(judge_flip_prob >= 0.0 && judge_flip_prob <= 1.0))
            throw ConfigError("judge_flip_prob", "must lie in [0, 1]");
        if (backend == BackendMode::Replay && !cache)
            throw ConfigError("cache", "replay mode needs a cache file");
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<std::string_view> keys) {
    for (const auto& [k, v] : j.items()) {
        (void)v;
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw ConfigError(where.empty() ? k : where + "." + k, "unknown configuration key");
    }
}

inline ModelCall model_call_from_json(const nlohmann::json& j, ModelCall base, const std::string& field) {
    check_keys(j, field, {"model", "temperature", "top_p", "max_tokens"});
    base.model = j.value("model", base.model);
    base.temperature = j.value("temperature", base.temperature);
    base.top_p = j.value("top_p", base.top_p);
    base.max_tokens = j.value("max_tokens", base.max_tokens);
    return base;
}

inline nlohmann::ordered_json model_call_to_json(const ModelCall& c) {
    return {{"model", c.model}, {"temperature", c.temperature}, {"top_p", c.top_p}, {"max_tokens", c.max_tokens}};
}

} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    if (!j.is_object()) throw ConfigError("config", "must be a JSON object");
    detail::check_keys(j, "",
                       {"policy", "arms", "include_no_rewrite", "reward_weights", "backend", "models", "dataset",
                        "dataset_name", "rounds", "seeds", "seed", "lambda", "evaluate_all_arms", "output_dir", "cache",
                        "strict_replay", "env", "judge_flip_prob", "live", "rate_limit", "bias", "max_failure_rate"});
    ExperimentConfig c;
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    try {
        if (j.contains("policy")) {
            const auto& p = j["policy"];
            if (p.is_string()) {
                c.policy = {p.get<std::string>(), {}};
            } else {
                detail::check_keys(p, "policy", {"name", "params"});
                c.policy.name = p.at("name").get<std::string>();
                if (p.contains("params"))
                    for (const auto& [k, v] : p["params"].items()) c.policy.params[k] = v.get<double>();
            }
            if (c.policy.name.rfind("static", 0) != 0) (void)bandit::default_params(c.policy.name);
        }
        if (j.contains("include_no_rewrite")) c.arms = prompts::enabled_arms(j["include_no_rewrite"].get<bool>());
        if (j.contains("arms")) {
            c.arms.clear();
            for (const auto& a : j["arms"]) {
                const auto id = prompts::arm_from_name(a.get<std::string>());
                if (!id) throw ConfigError("arms", "unknown arm '" + a.get<std::string>() + "'");
                c.arms.push_back(*id);
            }
        }
        if (j.contains("reward_weights")) {
            const auto& w = j["reward_weights"];
            detail::check_keys(w, "reward_weights", {"alpha", "beta", "gamma"});
            c.reward_weights = {w.value("alpha", 0.6), w.value("beta", 0.3), w.value("gamma", 0.1)};
        }
        if (j.contains("backend")) {
            const auto b = j["backend"].get<std::string>();
            if (b == "synthetic") c.backend = BackendMode::Synthetic;
            else if (b == "live") c.backend = BackendMode::Live;
            else if (b == "replay") c.backend = BackendMode::Replay;
            else throw ConfigError("backend", "expected synthetic, live or replay");
        }
        if (j.contains("models")) {
            const auto& m = j["models"];
            detail::check_keys(m, "models", {"tagger", "rewriter", "answerer", "judge", "perturber"});
            if (m.contains("tagger")) c.models.tagger = detail::model_call_from_json(m["tagger"], c.models.tagger, "models.tagger");
            if (m.contains("rewriter"))
                c.models.rewriter = detail::model_call_from_json(m["rewriter"], c.models.rewriter, "models.rewriter");
            if (m.contains("answerer"))
                c.models.answerer = detail::model_call_from_json(m["answerer"], c.models.answerer, "models.answerer");
            if (m.contains("judge")) c.models.judge = detail::model_call_from_json(m["judge"], c.models.judge, "models.judge");
            if (m.contains("perturber"))
                c.models.perturber = detail::model_call_from_json(m["perturber"], c.models.perturber, "models.perturber");
        }
        if (j.contains("dataset")) c.dataset = resolve(j["dataset"].get<std::string>());
        c.dataset_name = j.value("dataset_name", std::string());
        if (j.contains("rounds")) {
            if (!j["rounds"].is_number_integer() || j["rounds"].get<long long>() < 1)
                throw ConfigError("rounds", "must be an integer >= 1");
            c.rounds = j["rounds"].get<std::uint64_t>();
        }
        if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        if (j.contains("seed")) c.seeds = {j["seed"].get<std::uint64_t>()};
        c.lambda = j.value("lambda", c.lambda);
        c.evaluate_all_arms = j.value("evaluate_all_arms", false);
        if (j.contains("output_dir")) c.output_dir = resolve(j["output_dir"].get<std::string>());
        if (j.contains("cache")) c.cache = resolve(j["cache"].get<std::string>());
        c.strict_replay = j.value("strict_replay", false);
        if (j.contains("env")) c.env = j["env"];
        c.judge_flip_prob = j.value("judge_flip_prob", 0.0);
        if (j.contains("live")) {
            const auto& l = j["live"];
            detail::check_keys(l, "live", {"endpoint", "api_key_env", "timeout_seconds"});
            c.live.endpoint = l.value("endpoint", c.live.endpoint);
            c.live.api_key_env = l.value("api_key_env", c.live.api_key_env);
            c.live.timeout_seconds = l.value("timeout_seconds", c.live.timeout_seconds);
        }
        if (j.contains("rate_limit")) {
            const auto& r = j["rate_limit"];
            detail::check_keys(r, "rate_limit", {"max_concurrent", "max_per_minute"});
            c.rate_limit = std::make_pair(r.at("max_concurrent").get<int>(), r.at("max_per_minute").get<int>());
        }
        c.bias = j.value("bias", true);
        c.max_failure_rate = j.value("max_failure_rate", c.max_failure_rate);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config", e.what());
    }
    if (c.backend == BackendMode::Replay) c.strict_replay = true;
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config", path.string() + ": " + e.what());
    }
    return config_from_json(j, path.parent_path());
}

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
    nlohmann::ordered_json j;
    j["policy"] = {{"name", c.policy.name}, {"params", c.policy.params}};
    nlohmann::ordered_json arms = nlohmann::ordered_json::array();
    for (auto a : c.arms) arms.push_back(std::string(prompts::arm_name(a)));
    j["arms"] = arms;
    j["reward_weights"] = {{"alpha", c.reward_weights.alpha}, {"beta", c.reward_weights.beta},
                           {"gamma", c.reward_weights.gamma}};
    j["backend"] = std::string(backend_name(c.backend));
    j["models"] = {{"tagger", detail::model_call_to_json(c.models.tagger)},
                   {"rewriter", detail::model_call_to_json(c.models.rewriter)},
                   {"answerer", detail::model_call_to_json(c.models.answerer)},
                   {"judge", detail::model_call_to_json(c.models.judge)},
                   {"perturber", detail::model_call_to_json(c.models.perturber)}};
    j["dataset"] = c.dataset.string();
    j["dataset_name"] = c.resolved_dataset_name();
    j["rounds"] = c.rounds;
    j["seeds"] = c.seeds;
    j["lambda"] = c.lambda;
    j["evaluate_all_arms"] = c.evaluate_all_arms;
    j["output_dir"] = c.output_dir.string();
    if (c.cache) j["cache"] = c.cache->string();
    j["strict_replay"] = c.strict_replay;
    j["env"] = c.env;
    j["judge_flip_prob"] = c.judge_flip_prob;
    j["live"] = {{"endpoint", c.live.endpoint}, {"api_key_env", c.live.api_key_env},
                 {"timeout_seconds", c.live.timeout_seconds}};
    if (c.rate_limit) j["rate_limit"] = {{"max_concurrent", c.rate_limit->first}, {"max_per_minute", c.rate_limit->second}};
    j["bias"] = c.bias;
    j["max_failure_rate"] = c.max_failure_rate;
    return j;
}

// ---- round records ---------------------------------------------------------

struct ArmOutcome {
    std::size_t arm = 0;  // index into the run's arm list
    std::string rewritten;
    std::string answer;
    std::string verdict_raw;
    reward::RewardBreakdown breakdown;
};

struct RoundRecord : metrics::RoundLog {
    std::string query;
    std::string arm_name;
    std::string rewritten;
    std::string answer;
    std::string verdict_raw;
    std::uint64_t seq_select = 0;
    std::uint64_t seq_update = 0;
    std::uint64_t calls = 0;
    std::vector<double> scores;
    std::optional<std::vector<double>> probs;
    std::vector<ArmOutcome> all_arms;
};

struct ErrorRecord {
    std::uint64_t t = 0;
    std::string query_id;
    std::string stage;
    std::string message;
    std::optional<ContextVector> context;
    bool selected = false;  // the policy drew a selection before the failure
};

namespace detail {

inline nlohmann::ordered_json breakdown_fields(nlohmann::ordered_json j, const reward::RewardBreakdown& b) {
    j["s_llm"] = b.s_llm;
    j["s_fuzz"] = b.s_fuzz;
    j["s_bleu"] = b.s_bleu;
    j["weights"] = {b.weights.alpha, b.weights.beta, b.weights.gamma};
    j["reward"] = b.r;
    return j;
}

inline reward::RewardBreakdown breakdown_from(const nlohmann::json& j) {
    reward::RewardBreakdown b;
    b.s_llm = j.at("s_llm").get<double>();
    b.s_fuzz = j.at("s_fuzz").get<double>();
    b.s_bleu = j.at("s_bleu").get<double>();
    const auto& w = j.at("weights");
    b.weights = {w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>()};
    b.r = j.at("reward").get<double>();
    return b;
}

} // namespace detail

inline nlohmann::ordered_json to_json(const RoundRecord& r) {
    nlohmann::ordered_json j;
    j["type"] = "round";
    j["t"] = r.t;
    j["query_id"] = r.query_id;
    if (!r.query.empty()) j["query"] = r.query;
    j["features"] = r.context.bits();
    j["arm"] = r.arm;
    j["arm_name"] = r.arm_name;
    if (!r.rewritten.empty()) j["rewritten"] = r.rewritten;
    if (!r.answer.empty()) j["answer"] = r.answer;
    if (!r.verdict_raw.empty()) j["verdict"] = r.verdict_raw;
    if (r.breakdown) j = detail::breakdown_fields(std::move(j), *r.breakdown);
    else j["reward"] = r.reward;
    if (r.oracle) j["oracle"] = *r.oracle;
    if (r.baseline) j["baseline"] = *r.baseline;
    j["policy"] = r.policy;
    j["dataset"] = r.dataset;
    j["calls"] = r.calls;
    j["seq_select"] = r.seq_select;
    j["seq_update"] = r.seq_update;
    j["scores"] = r.scores;
    if (r.probs) j["probs"] = *r.probs;
    if (!r.all_arms.empty()) {
        nlohmann::ordered_json all = nlohmann::ordered_json::array();
        for (const auto& o : r.all_arms) {
            nlohmann::ordered_json oj;
            oj["arm"] = o.arm;
            oj["rewritten"] = o.rewritten;
            oj["answer"] = o.answer;
            oj["verdict"] = o.verdict_raw;
            all.push_back(detail::breakdown_fields(std::move(oj), o.breakdown));
        }
        j["all_arms"] = all;
    }
    return j;
}

inline RoundRecord round_from_json(const nlohmann::json& j) {
    RoundRecord r;
    r.t = j.at("t").get<std::uint64_t>();
    r.query_id = j.at("query_id").get<std::string>();
    r.query = j.value("query", std::string());
    r.context = ContextVector::from_bits(j.at("features").get<std::string>());
    r.arm = j.at("arm").get<std::size_t>();
    r.arm_name = j.value("arm_name", std::string());
    r.rewritten = j.value("rewritten", std::string());
    r.answer = j.value("answer", std::string());
    r.verdict_raw = j.value("verdict", std::string());
    if (j.contains("s_llm")) {
        r.breakdown = detail::breakdown_from(j);
        r.reward = r.breakdown->r;
    } else {
        r.reward = j.at("reward").get<double>();
    }
    if (j.contains("oracle")) r.oracle = j["oracle"].get<double>();
    if (j.contains("baseline")) r.baseline = j["baseline"].get<double>();
    r.policy = j.at("policy").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.calls = j.value("calls", std::uint64_t{0});
    r.seq_select = j.value("seq_select", std::uint64_t{0});
    r.seq_update = j.value("seq_update", std::uint64_t{0});
    r.scores = j.value("scores", std::vector<double>{});
    if (j.contains("probs")) r.probs = j["probs"].get<std::vector<double>>();
    if (j.contains("all_arms"))
        for (const auto& oj : j["all_arms"]) {
            ArmOutcome o;
            o.arm = oj.at("arm").get<std::size_t>();
            o.rewritten = oj.value("rewritten", std::string());
            o.answer = oj.value("answer", std::string());
            o.verdict_raw = oj.value("verdict", std::string());
            o.breakdown = detail::breakdown_from(oj);
            r.all_arms.push_back(std::move(o));
        }
    return r;
}

inline nlohmann::ordered_json to_json(const ErrorRecord& e) {
    nlohmann::ordered_json j;
    j["type"] = "error";
    j["t"] = e.t;
    j["query_id"] = e.query_id;
    j["stage"] = e.stage;
    j["message"] = e.message;
    if (e.context) j["features"] = e.context->bits();
    j["selected"] = e.selected;
    return j;
}

inline ErrorRecord error_from_json(const nlohmann::json& j) {
    ErrorRecord e;
    e.t = j.at("t").get<std::uint64_t>();
    e.query_id = j.at("query_id").get<std::string>();
    e.stage = j.at("stage").get<std::string>();
    e.message = j.value("message", std::string());
    if (j.contains("features")) e.context = ContextVector::from_bits(j["features"].get<std::string>());
    e.selected = j.value("selected", false);
    return e;
}

/// Header fields that identify a run; resuming requires an exact match.
struct RunHeader {
    std::string mode;  // "pipeline" or "simulate"
    std::string label;  // policy name or "static:<Arm>"
    bandit::PolicySpec policy;
    std::optional<std::size_t> static_arm;
    std::uint64_t seed = 0;
    std::string dataset;
    std::uint64_t rounds = 0;
    std::vector<std::string> arms;
    bool bias = true;
    double lambda = 0.1;
    bool evaluate_all_arms = false;

    std::size_t dim() const noexcept { return kNumFeatures + (bias ? 1 : 0); }
};

inline nlohmann::ordered_json to_json(const RunHeader& h) {
    nlohmann::ordered_json j;
    j["type"] = "header";
    j["schema_version"] = kLogSchemaVersion;
    j["feature_schema_version"] = kFeatureSchemaVersion;
    j["prompt_version"] = prompts::kPromptVersion;
    j["mode"] = h.mode;
    j["label"] = h.label;
    j["policy"] = {{"name", h.policy.name}, {"params", h.policy.params}};
    if (h.static_arm) j["static_arm"] = *h.static_arm;
    j["seed"] = h.seed;
    j["dataset"] = h.dataset;
    j["rounds"] = h.rounds;
    j["arms"] = h.arms;
    j["bias"] = h.bias;
    j["lambda"] = h.lambda;
    j["evaluate_all_arms"] = h.evaluate_all_arms;
    return j;
}

inline RunHeader header_from_json(const nlohmann::json& j) {
    if (j.value("type", std::string()) != "header") throw ProtocolError("first line is not a header record");
    if (j.value("schema_version", 0) != kLogSchemaVersion) throw ProtocolError("unsupported log schema version");
    RunHeader h;
    h.mode = j.at("mode").get<std::string>();
    h.label = j.at("label").get<std::string>();
    h.policy.name = j.at("policy").at("name").get<std::string>();
    for (const auto& [k, v] : j.at("policy").at("params").items()) h.policy.params[k] = v.get<double>();
    if (j.contains("static_arm")) h.static_arm = j["static_arm"].get<std::size_t>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.dataset = j.at("dataset").get<std::string>();
    h.rounds = j.at("rounds").get<std::uint64_t>();
    h.arms = j.at("arms").get<std::vector<std::string>>();
    h.bias = j.at("bias").get<bool>();
    h.lambda = j.at("lambda").get<double>();
    h.evaluate_all_arms = j.value("evaluate_all_arms", false);
    return h;
}

struct RunLog {
    std::filesystem::path path;
    RunHeader header;
    std::vector<RoundRecord> rounds;
    std::vector<ErrorRecord> errors;
    std::size_t valid_bytes = 0;  // prefix of the file holding complete records
    bool truncated_tail = false;

    std::uint64_t last_t() const {
        std::uint64_t t = 0;
        if (!rounds.empty()) t = std::max(t, rounds.back().t);
        if (!errors.empty()) t = std::max(t, errors.back().t);
        return t;
    }
};

/// Parses a round log. A final line without a newline that fails to parse is
/// treated as an interrupted write when `allow_partial_tail` is set; any other
/// bad line is an error naming its line number.
inline RunLog read_run_log(const std::filesystem::path& path, bool allow_partial_tail = false) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open log '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    RunLog log;
    log.path = path;
    std::size_t pos = 0, lineno = 0;
    bool have_header = false;
    std::uint64_t expect_t = 1;
    while (pos < text.size()) {
        ++lineno;
        const auto nl = text.find('\n', pos);
        const bool complete = nl != std::string::npos;
        const std::string line = text.substr(pos, complete ? nl - pos : std::string::npos);
        const std::size_t next = complete ? nl + 1 : text.size();
        auto fail = [&](const std::string& what) -> void {
            throw ProtocolError(path.string() + ":" + std::to_string(lineno) + ": " + what);
        };
        try {
            const auto j = nlohmann::json::parse(line);
            const auto type = j.value("type", std::string());
            if (!have_header) {
                log.header = header_from_json(j);
                have_header = true;
            } else if (type == "round") {
                auto r = round_from_json(j);
                if (r.t != expect_t) fail("expected round " + std::to_string(expect_t));
                ++expect_t;
                log.rounds.push_back(std::move(r));
            } else if (type == "error") {
                auto e = error_from_json(j);
                if (e.t != expect_t) fail("expected round " + std::to_string(expect_t));
                ++expect_t;
                log.errors.push_back(std::move(e));
            } else {
                fail("unknown record type '" + type + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            if (!complete && allow_partial_tail) {
                log.truncated_tail = true;
                break;
            }
            fail(e.what());
        } catch (const ContractError& e) {
            fail(e.what());
        }
        log.valid_bytes = next;
        pos = next;
    }
    if (!have_header) throw ProtocolError(path.string() + ": log has no header record");
    return log;
}

/// Append-only JSONL writer; every record is flushed before returning.
class LogWriter {
public:
    explicit LogWriter(const std::filesystem::path& path, bool append) {
        out_.open(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
        if (!out_) throw Error("cannot write log '" + path.string() + "'");
    }

    template <class J>
    void write(const J& j) {
        out_ << j.dump() << '\n';
        out_.flush();
        if (!out_) throw Error("log write failed");
    }

private:
    std::ofstream out_;
};

// ---- query order -----------------------------------------------------------

/// T dataset indices: a shuffled pass without replacement, then (only when
/// the dataset is smaller than T) uniform draws with replacement.
inline std::vector<std::size_t> query_order(std::size_t n, std::uint64_t T, std::uint64_t seed) {
    require(n >= 1, "query order needs a nonempty dataset");
    Rng rng(derive_seed(seed, "experiment/order"));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
    std::vector<std::size_t> out;
    out.reserve(T);
    for (std::uint64_t t = 0; t < T; ++t) out.push_back(t < n ? idx[t] : rng.index(n));
    return out;
}

// ---- gateway assembly ------------------------------------------------------

struct GatewayBundle {
    std::shared_ptr<gateway::Gateway> gateway;
    std::shared_ptr<env::SyntheticBackend> synthetic;  // null unless synthetic mode
};

inline GatewayBundle make_gateway(const ExperimentConfig& c, const std::vector<data::DatasetRecord>& records,
                                  std::uint64_t seed) {
    GatewayBundle b;
    gateway::GatewayOptions opt;
    opt.cache_path = c.cache;
    opt.strict_replay = c.strict_replay;
    opt.rate_limit = c.rate_limit;
    opt.retry.seed = derive_seed(seed, "gateway/retry");
    std::shared_ptr<gateway::Backend> backend;
    switch (c.backend) {
    case BackendMode::Synthetic:
        b.synthetic = std::make_shared<env::SyntheticBackend>(env::spec_from_json(c.env, seed),
                                                              data::synthetic_records(records),
                                                              env::SyntheticOptions{c.judge_flip_prob});
        backend = b.synthetic;
        break;
    case BackendMode::Live: backend = std::make_shared<gateway::LiveBackend>(c.live); break;
    case BackendMode::Replay: opt.strict_replay = true; break;
    }
    b.gateway = std::make_shared<gateway::Gateway>(backend, std::move(opt));
    return b;
}

// ---- run summary -----------------------------------------------------------

struct RunSummary {
    std::string label;
    std::uint64_t seed = 0;
    std::filesystem::path log_path;
    std::uint64_t rounds = 0;
    std::uint64_t failures = 0;
    double r_adj = 0.0;
    double cumulative_reward = 0.0;
    std::optional<double> cumulative_regret;
    std::optional<double> mean_step_regret;
    std::optional<double> win_rate;
    std::optional<double> accuracy;
    std::vector<double> arm_frequencies;
    metrics::CellMatrix uplift;
    gateway::GatewayCounters counters;
};

inline RunSummary summarize(const RunLog& log, std::size_t arms) {
    RunSummary s;
    s.label = log.header.label;
    s.seed = log.header.seed;
    s.log_path = log.path;
    s.rounds = log.rounds.size();
    s.failures = log.errors.size();
    std::vector<metrics::RoundLog> base(log.rounds.begin(), log.rounds.end());
    if (!base.empty()) {
        s.r_adj = metrics::exploration_adjusted_reward(base, arms, log.header.lambda);
        s.cumulative_reward = metrics::cumulative_reward(base);
        const bool have_oracle = std::all_of(base.begin(), base.end(), [](const auto& r) { return r.oracle.has_value(); });
        if (have_oracle) {
            s.cumulative_regret = metrics::cumulative_regret(base);
            s.mean_step_regret = *s.cumulative_regret / static_cast<double>(base.size());
        }
        const bool have_base = std::all_of(base.begin(), base.end(), [](const auto& r) { return r.baseline.has_value(); });
        if (have_base) s.win_rate = metrics::win_rate_inline(base).win;
        const bool have_bd = std::all_of(base.begin(), base.end(), [](const auto& r) { return r.breakdown.has_value(); });
        if (have_bd) {
            double acc = 0.0;
            for (const auto& r : base) acc += r.breakdown->s_llm;
            s.accuracy = acc / static_cast<double>(base.size());
        }
    }
    s.arm_frequencies = metrics::arm_frequencies(base, arms);
    s.uplift = metrics::feature_uplift(base, arms);
    return s;
}

// ---- policy construction and replay ----------------------------------------

inline bandit::Policy make_policy(const RunHeader& h) {
    const std::size_t K = h.arms.size();
    if (h.static_arm) return bandit::static_policy(K, *h.static_arm, h.dim());
    return bandit::init_policy(h.policy, K, h.dim(), derive_seed(h.seed, "policy"));
}

/// Rebuilds policy state by re-running selection and update over a log.
/// Fails if a replayed selection disagrees with the logged arm.
inline bandit::Policy replay_policy(const RunLog& log) {
    auto policy = make_policy(log.header);
    std::size_t ri = 0, ei = 0;
    const std::uint64_t last = log.last_t();
    for (std::uint64_t t = 1; t <= last; ++t) {
        if (ri < log.rounds.size() && log.rounds[ri].t == t) {
            const auto& r = log.rounds[ri++];
            ContextVector x = r.context;
            x.bias = log.header.bias;
            const auto v = encode_context(x);
            const auto tr = policy.step(v, t);
            if (tr.chosen != r.arm)
                throw ProtocolError(log.path.string() + ": replay chose arm " + std::to_string(tr.chosen) +
                                    " at round " + std::to_string(t) + " but the log records " + std::to_string(r.arm));
            if (!log.header.static_arm) policy.observe(v, tr, r.reward);
        } else if (ei < log.errors.size() && log.errors[ei].t == t) {
            const auto& e = log.errors[ei++];
            if (e.selected) {
                require(e.context.has_value(), "error record after selection lacks features");
                ContextVector x = *e.context;
                x.bias = log.header.bias;
                (void)policy.step(encode_context(x), t);
            }
        } else {
            throw ProtocolError(log.path.string() + ": missing record for round " + std::to_string(t));
        }
    }
    return policy;
}

inline std::string log_file_name(const std::string& label, std::uint64_t seed) {
    std::string s = label;
    std::replace(s.begin(), s.end(), ':', '-');
    return s + "_seed" + std::to_string(seed) + ".jsonl";
}

// ---- the online loop -------------------------------------------------------

struct RunOptions {
    std::optional<std::size_t> static_arm;  // index into the config's arm list
};

namespace detail {

class PipelineRun {
public:
    PipelineRun(const ExperimentConfig& c, gateway::Gateway& gw, RunHeader header)
        : c_(c), gw_(gw), header_(std::move(header)) {}

    ArmOutcome evaluate_arm(std::size_t k, const data::DatasetRecord& rec, std::uint64_t t) {
        const int si = static_cast<int>(t);
        ArmOutcome o;
        o.arm = k;
        o.rewritten = apply_rewrite(c_.arms[k], rec.query, gw_, c_.models.rewriter, si).rewritten;
        o.answer = data::answer_question(rec, o.rewritten, gw_, c_.models.answerer, si);
        const auto scored = score_answer(rec.query, rec.references, o.answer, gw_, c_.models.judge, c_.reward_weights, si);
        o.verdict_raw = scored.verdict.raw;
        o.breakdown = scored.breakdown;
        return o;
    }

    /// One round; returns a round record or throws, leaving `stage`,
    /// `context` and `selected` describing how far it got.
    RoundRecord round(bandit::Policy& policy, const data::DatasetRecord& rec, std::uint64_t t, std::uint64_t& seq) {
        const auto calls_before = gw_.counters().requests;
        stage = "tag";
        selected = false;
        context.reset();
        ContextVector x = tag_features(rec.query, gw_, c_.models.tagger);
        x.bias = c_.bias;
        context = x;
        const auto v = encode_context(x);

        stage = "select";
        RoundRecord r;
        r.seq_select = ++seq;
        const auto tr = policy.step(v, t);
        selected = true;
        const std::size_t k = tr.chosen;

        stage = "evaluate";
        ArmOutcome chosen;
        if (c_.evaluate_all_arms) {
            for (std::size_t j = 0; j < c_.arms.size(); ++j) r.all_arms.push_back(evaluate_arm(j, rec, t));
            chosen = r.all_arms[k];
            double best = 0.0;
            for (const auto& o : r.all_arms) best = std::max(best, o.breakdown.r);
            r.oracle = best;
            for (const auto& o : r.all_arms)
                if (c_.arms[o.arm] == prompts::ArmId::NoRewrite) r.baseline = o.breakdown.r;
        } else {
            chosen = evaluate_arm(k, rec, t);
        }

        stage = "update";
        if (!header_.static_arm) policy.observe(v, tr, chosen.breakdown.r);
        r.seq_update = ++seq;

        r.t = t;
        r.query_id = rec.id;
        r.query = rec.query;
        r.context = x;
        r.arm = k;
        r.arm_name = std::string(prompts::arm_name(c_.arms[k]));
        r.rewritten = chosen.rewritten;
        r.answer = chosen.answer;
        r.verdict_raw = chosen.verdict_raw;
        r.breakdown = chosen.breakdown;
        r.reward = chosen.breakdown.r;
        r.policy = header_.label;
        r.dataset = header_.dataset;
        r.scores = tr.scores;
        r.probs = tr.probs;
        r.calls = gw_.counters().requests - calls_before;
        return r;
    }

    std::string stage;
    std::optional<ContextVector> context;
    bool selected = false;

private:
    const ExperimentConfig& c_;
    gateway::Gateway& gw_;
    RunHeader header_;
};

} // namespace detail

inline RunHeader pipeline_header(const ExperimentConfig& c, std::uint64_t seed, const RunOptions& opt) {
    RunHeader h;
    h.mode = "pipeline";
    h.policy = c.policy;
    h.static_arm = opt.static_arm;
    h.label = opt.static_arm ? "static:" + std::string(prompts::arm_name(c.arms.at(*opt.static_arm))) : c.policy.name;
    if (opt.static_arm) h.policy = {"static", {}};
    h.seed = seed;
    h.dataset = c.resolved_dataset_name();
    h.rounds = c.rounds;
    for (auto a : c.arms) h.arms.emplace_back(prompts::arm_name(a));
    h.bias = c.bias;
    h.lambda = c.lambda;
    h.evaluate_all_arms = c.evaluate_all_arms;
    return h;
}

/// Runs (or resumes) one seed of the online loop and returns its summary.
inline RunSummary run_seed(const ExperimentConfig& c, std::uint64_t seed, const RunOptions& opt = {}) {
    c.validate();
    if (opt.static_arm) require(*opt.static_arm < c.arms.size(), "static arm out of range");
    if (!opt.static_arm && c.arms.size() < 2) throw ConfigError("arms", "a learning policy needs at least two arms");
    const auto records = data::load_dataset(c.dataset);
    auto bundle = make_gateway(c, records, seed);
    const RunHeader header = pipeline_header(c, seed, opt);

    std::filesystem::create_directories(c.output_dir);
    const auto path = c.output_dir / log_file_name(header.label, seed);
    std::optional<bandit::Policy> policy;
    std::uint64_t start = 1, failures = 0, seq = 0;
    bool append = false;
    if (std::filesystem::exists(path)) {
        if (!c.resume) throw ConfigError("output_dir", "log '" + path.string() + "' exists; pass --resume to continue it");
        auto log = read_run_log(path, true);
        if (to_json(log.header).dump() != to_json(header).dump())
            throw ConfigError("resume", "existing log '" + path.string() + "' was written with a different configuration");
        if (log.truncated_tail) std::filesystem::resize_file(path, log.valid_bytes);
        policy.emplace(replay_policy(log));
        start = log.last_t() + 1;
        failures = log.errors.size();
        for (const auto& r : log.rounds) seq = std::max(seq, r.seq_update);
        append = true;
    } else {
        policy.emplace(make_policy(header));
    }

    LogWriter writer(path, append);
    if (!append) writer.write(to_json(header));

    const auto order = query_order(records.size(), c.rounds, seed);
    detail::PipelineRun run(c, *bundle.gateway, header);
    const double budget = c.max_failure_rate * static_cast<double>(c.rounds);
    for (std::uint64_t t = start; t <= c.rounds; ++t) {
        const auto& rec = records[order[t - 1]];
        try {
            writer.write(to_json(run.round(*policy, rec, t, seq)));
        } catch (const ContractError&) {
            throw;
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            ErrorRecord er{t, rec.id, run.stage, e.what(), run.context, run.selected};
            writer.write(to_json(er));
            ++failures;
            if (static_cast<double>(failures) > budget)
                throw Error("aborting run: " + std::to_string(failures) + " of " + std::to_string(c.rounds) +
                            " rounds failed (last: " + e.what() + ")");
        }
    }
    auto summary = summarize(read_run_log(path), c.arms.size());
    summary.counters = bundle.gateway->counters();
    return summary;
}

inline std::vector<RunSummary> run_experiment(const ExperimentConfig& c) {
    std::vector<RunSummary> out;
    for (auto seed : c.seeds) out.push_back(run_seed(c, seed));
    return out;
}

/// Same pipeline with one fixed arm and no policy updates.
inline std::vector<RunSummary> run_static_policy(const ExperimentConfig& c, prompts::ArmId arm) {
    const auto it = std::find(c.arms.begin(), c.arms.end(), arm);
    if (it == c.arms.end())
        throw ConfigError("arms", "arm " + std::string(prompts::arm_name(arm)) + " is not enabled in this configuration");
    RunOptions opt;
    opt.static_arm = static_cast<std::size_t>(it - c.arms.begin());
    std::vector<RunSummary> out;
    for (auto seed : c.seeds) out.push_back(run_seed(c, seed, opt));
    return out;
}

// ---- environment-only simulation ---------------------------------------------

inline std::vector<std::string> env_arm_names(std::size_t K) {
    std::vector<std::string> names;
    for (std::size_t k = 0; k < K; ++k)
        names.push_back(K <= prompts::kArmNames.size() ? std::string(prompts::kArmNames[k]) : "arm" + std::to_string(k));
    return names;
}

struct SimulationResult {
    RunHeader header;
    std::vector<metrics::RoundLog> logs;
};

/// Policy loop against the environment directly (no gateway). The
/// environment realizes noise for every arm each round, so different
/// policies on the same seed face identical contexts and rewards.
inline SimulationResult simulate(const env::EnvSpec& spec, const bandit::PolicySpec& policy_spec, std::uint64_t rounds,
                                 std::uint64_t seed, std::optional<std::size_t> static_arm = std::nullopt,
                                 double lambda = 0.1) {
    require(rounds >= 1, "simulation needs at least one round");
    env::EnvSpec s = spec;
    s.seed = seed;
    env::Env env(s);
    SimulationResult out;
    auto& h = out.header;
    h.mode = "simulate";
    h.policy = static_arm ? bandit::PolicySpec{"static", {}} : policy_spec;
    h.static_arm = static_arm;
    h.label = static_arm ? "static:" + env_arm_names(s.arms)[*static_arm] : policy_spec.name;
    h.seed = seed;
    h.dataset = "synthetic";
    h.rounds = rounds;
    h.arms = env_arm_names(s.arms);
    h.bias = s.bias;
    h.lambda = lambda;
    auto policy = make_policy(h);
    out.logs.reserve(rounds);
    for (std::uint64_t t = 1; t <= rounds; ++t) {
        const auto d = env.draw();
        const auto x = encode_context(d.context);
        const auto tr = policy.step(x, t);
        const double r = d.realized[tr.chosen];
        if (!static_arm) policy.observe(x, tr, r);
        metrics::RoundLog l;
        l.t = t;
        l.query_id = "s" + std::to_string(t);
        l.context = d.context;
        l.arm = tr.chosen;
        l.reward = r;
        l.oracle = d.oracle;
        l.policy = h.label;
        l.dataset = h.dataset;
        out.logs.push_back(std::move(l));
    }
    return out;
}

/// Writes a simulation as a round log (header plus one record per round).
inline void write_simulation_log(const std::filesystem::path& path, const SimulationResult& sim) {
    LogWriter w(path, false);
    w.write(to_json(sim.header));
    std::uint64_t seq = 0;
    for (const auto& l : sim.logs) {
        RoundRecord r;
        static_cast<metrics::RoundLog&>(r) = l;
        r.arm_name = sim.header.arms[l.arm];
        r.seq_select = ++seq;
        r.seq_update = ++seq;
        w.write(to_json(r));
    }
}

} // namespace rlab::experiment
