#pragma once

// Linear ground-truth environment over binary contexts, with exact oracle
// rewards, plus a chat backend that stands in for every model purpose.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rlab/error.hpp"
#include "rlab/features.hpp"
#include "rlab/gateway.hpp"
#include "rlab/prompts.hpp"
#include "rlab/random.hpp"
#include "rlab/reward.hpp"
#include "rlab/tagger.hpp"

namespace rlab::env {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct EnvSpec {
    std::size_t arms = 5;
    bool bias = true;
    Matrix theta_star;                           // arms x dim
    std::array<double, kNumFeatures> feature_p{};  // Bernoulli rate per feature
    double sigma = 0.0;
    std::uint64_t seed = 0;
    /// Reject specs whose noiseless means can leave [0, 1]. Disable only to
    /// exercise clipping.
    bool check_bounds = true;

    std::size_t dim() const noexcept { return kNumFeatures + (bias ? 1 : 0); }

    /// Range of theta_a' x over all binary contexts: each feature ranges over
    /// [0, 1] independently and the bias is fixed at 1.
    std::pair<double, double> mean_bounds(std::size_t arm) const {
        double lo = 0.0, hi = 0.0;
        for (std::size_t i = 0; i < kNumFeatures; ++i) {
            const double w = theta_star(static_cast<Eigen::Index>(arm), static_cast<Eigen::Index>(i));
            lo += std::min(0.0, w);
            hi += std::max(0.0, w);
        }
        if (bias) {
            const double b = theta_star(static_cast<Eigen::Index>(arm), static_cast<Eigen::Index>(kNumFeatures));
            lo += b;
            hi += b;
        }
        return {lo, hi};
    }

    void validate() const {
        if (arms < 1) throw ConfigError("env.arms", "must be >= 1");
        if (theta_star.rows() != static_cast<Eigen::Index>(arms) || theta_star.cols() != static_cast<Eigen::Index>(dim()))
            throw ConfigError("env.theta_star", "must be arms x " + std::to_string(dim()));
        if (!theta_star.allFinite()) throw ConfigError("env.theta_star", "must be finite");
        for (double p : feature_p)
            if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("env.feature_p", "rates must lie in [0, 1]");
        if (!(sigma >= 0.0)) throw ConfigError("env.sigma", "must be >= 0");
        if (!check_bounds) return;
        for (std::size_t a = 0; a < arms; ++a) {
            const auto [lo, hi] = mean_bounds(a);
            if (lo < -1e-12 || hi > 1.0 + 1e-12)
                throw ConfigError("env.theta_star", "arm " + std::to_string(a) + " mean ranges over [" +
                                                        std::to_string(lo) + ", " + std::to_string(hi) +
                                                        "], outside [0, 1]");
        }
    }
};

struct EnvDraw {
    ContextVector context;
    std::vector<double> means;
    std::vector<double> realized;
    double oracle = 0.0;
};

inline double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

/// Stateful environment: one stream for contexts, one for reward noise.
class Env {
public:
    explicit Env(EnvSpec spec)
        : spec_(std::move(spec)),
          context_rng_(derive_seed(spec_.seed, "env/context")),
          noise_rng_(derive_seed(spec_.seed, "env/noise")) {
        spec_.validate();
    }

    const EnvSpec& spec() const noexcept { return spec_; }
    std::size_t arms() const noexcept { return spec_.arms; }
    std::size_t dim() const noexcept { return spec_.dim(); }

    ContextVector sample_context() { return sample_context_from(context_rng_); }

    ContextVector sample_context_from(Rng& rng) const {
        ContextVector v;
        v.bias = spec_.bias;
        for (std::size_t i = 0; i < kNumFeatures; ++i) v.features[i] = rng.bernoulli(spec_.feature_p[i]);
        return v;
    }

    double mean_reward(const ContextVector& x, std::size_t arm) const {
        require(arm < spec_.arms, "env arm out of range");
        require(x.bias == spec_.bias, "context bias setting does not match the environment");
        return clip01(spec_.theta_star.row(static_cast<Eigen::Index>(arm)).dot(encode_context(x)));
    }

    std::vector<double> mean_rewards(const ContextVector& x) const {
        std::vector<double> m(spec_.arms);
        for (std::size_t a = 0; a < spec_.arms; ++a) m[a] = mean_reward(x, a);
        return m;
    }

    /// clip(theta_a' x + N(0, sigma^2)); consumes one normal when sigma > 0.
    double env_reward(const ContextVector& x, std::size_t arm) {
        require(arm < spec_.arms, "env arm out of range");
        const double raw = spec_.theta_star.row(static_cast<Eigen::Index>(arm)).dot(encode_context(x));
        return clip01(spec_.sigma > 0.0 ? raw + spec_.sigma * noise_rng_.normal() : raw);
    }

    /// Context plus realized rewards for every arm (noise drawn in arm order).
    EnvDraw draw() {
        EnvDraw d;
        d.context = sample_context();
        d.means = mean_rewards(d.context);
        d.realized.resize(spec_.arms);
        for (std::size_t a = 0; a < spec_.arms; ++a) d.realized[a] = env_reward(d.context, a);
        d.oracle = oracle_reward(d);
        return d;
    }

    static double oracle_reward(const EnvDraw& d) {
        require(!d.realized.empty(), "draw has no rewards");
        return *std::max_element(d.realized.begin(), d.realized.end());
    }

private:
    EnvSpec spec_;
    Rng context_rng_;
    Rng noise_rng_;
};

// ---- canonical specs -------------------------------------------------------

inline constexpr std::size_t kContextFeature = 3;  // Presupposition

/// Five arms, d = 18. Arm 1 is best exactly when feature 3 is on
/// (0.9 vs 0.6); otherwise the constant arm 0 wins (0.6 vs 0.2).
inline EnvSpec context_dependent_spec(std::uint64_t seed) {
    EnvSpec s;
    s.arms = 5;
    s.bias = true;
    s.theta_star = Matrix::Zero(5, 18);
    s.theta_star(0, 17) = 0.6;
    s.theta_star(1, 17) = 0.2;
    s.theta_star(1, kContextFeature) = 0.7;
    s.theta_star(2, 17) = 0.3;
    s.theta_star(3, 17) = 0.25;
    s.theta_star(4, 17) = 0.2;
    s.feature_p.fill(0.3);
    s.sigma = 0.05;
    s.seed = seed;
    return s;
}

/// Context-free means with a single best arm ahead by `gap`.
inline EnvSpec dominant_arm_spec(std::uint64_t seed, std::size_t arms = 5, std::size_t best = 0, double gap = 0.2,
                                 double sigma = 0.1) {
    EnvSpec s;
    s.arms = arms;
    s.bias = true;
    s.theta_star = Matrix::Zero(static_cast<Eigen::Index>(arms), 18);
    for (std::size_t a = 0; a < arms; ++a) s.theta_star(static_cast<Eigen::Index>(a), 17) = 0.5;
    s.theta_star(static_cast<Eigen::Index>(best), 17) = 0.5 + gap;
    s.feature_p.fill(0.3);
    s.sigma = sigma;
    s.seed = seed;
    return s;
}

// ---- serialization ---------------------------------------------------------

inline nlohmann::json spec_to_json(const EnvSpec& s) {
    nlohmann::json theta = nlohmann::json::array();
    for (Eigen::Index a = 0; a < s.theta_star.rows(); ++a) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < s.theta_star.cols(); ++j) row.push_back(s.theta_star(a, j));
        theta.push_back(row);
    }
    return {{"arms", s.arms}, {"bias", s.bias},   {"theta_star", theta},
            {"feature_p", s.feature_p}, {"sigma", s.sigma}, {"seed", s.seed}};
}

/// Either {"canonical": "context_dependent" | "dominant_arm", ...} or an
/// explicit spec.
inline EnvSpec spec_from_json(const nlohmann::json& j, std::uint64_t default_seed) {
    try {
        const std::uint64_t seed = j.value("seed", default_seed);
        if (j.contains("canonical")) {
            const auto name = j.at("canonical").get<std::string>();
            if (name == "context_dependent") return context_dependent_spec(seed);
            if (name == "dominant_arm")
                return dominant_arm_spec(seed, j.value("arms", std::size_t{5}), j.value("best", std::size_t{0}),
                                         j.value("gap", 0.2), j.value("sigma", 0.1));
            throw ConfigError("env.canonical", "unknown canonical environment '" + name + "'");
        }
        EnvSpec s;
        s.arms = j.at("arms").get<std::size_t>();
        s.bias = j.value("bias", true);
        const auto& theta = j.at("theta_star");
        s.theta_star = Matrix(static_cast<Eigen::Index>(theta.size()),
                              static_cast<Eigen::Index>(theta.empty() ? 0 : theta[0].size()));
        for (std::size_t a = 0; a < theta.size(); ++a) {
            if (theta[a].size() != theta[0].size()) throw ConfigError("env.theta_star", "ragged rows");
            for (std::size_t c = 0; c < theta[a].size(); ++c)
                s.theta_star(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) = theta[a][c].get<double>();
        }
        const auto& p = j.at("feature_p");
        if (p.is_number()) {
            s.feature_p.fill(p.get<double>());
        } else {
            if (p.size() != kNumFeatures) throw ConfigError("env.feature_p", "needs 17 rates or one number");
            for (std::size_t i = 0; i < kNumFeatures; ++i) s.feature_p[i] = p[i].get<double>();
        }
        s.sigma = j.value("sigma", 0.0);
        s.seed = seed;
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("env", e.what());
    }
}

// ---- labeled reward components ----------------------------------------------

struct LabeledScoreOptions {
    double p_correct = 0.5;
    double judge_accuracy = 0.95;
    double fuzz_correct = 0.75, fuzz_wrong = 0.45, fuzz_sd = 0.15;
    double bleu_correct = 0.6, bleu_wrong = 0.3, bleu_sd = 0.2;
};

/// Labeled (s_llm, s_fuzz, s_bleu) triples: the judge agrees with the label
/// with probability `judge_accuracy`; lexical scores are clipped normals
/// with higher means for correct answers.
inline std::vector<reward::ComponentScores> labeled_component_scores(std::size_t n, std::uint64_t seed,
                                                                     const LabeledScoreOptions& o = {}) {
    Rng rng(derive_seed(seed, "labeled-scores"));
    std::vector<reward::ComponentScores> out(n);
    for (auto& c : out) {
        c.correct = rng.bernoulli(o.p_correct);
        const bool agree = rng.bernoulli(o.judge_accuracy);
        c.s_llm = (c.correct == agree) ? 1.0 : 0.0;
        c.s_fuzz = clip01(rng.normal(c.correct ? o.fuzz_correct : o.fuzz_wrong, o.fuzz_sd));
        c.s_bleu = clip01(rng.normal(c.correct ? o.bleu_correct : o.bleu_wrong, o.bleu_sd));
    }
    return out;
}

// ---- synthetic chat backend ------------------------------------------------

inline constexpr std::string_view kDistractor = "zzdistractor";

/// Query known to the synthetic backend.
struct SyntheticRecord {
    std::string query;
    std::vector<std::string> references;
    /// How many of the five generated perturbations are answered wrongly
    /// (the first n in generation order).
    std::size_t failing_perturbations = 0;
    /// Original query is answered wrongly.
    bool unanswerable = false;
    /// Perturbations judged not equivalent to the original (by index).
    std::set<std::size_t> invalid_perturbations;
};

struct SyntheticOptions {
    double judge_flip_prob = 0.0;
};

/// Tag prepended by the rewriter echo: "[ARM:<name>] <query>".
inline std::string arm_tag(std::string_view arm) { return "[ARM:" + std::string(arm) + "] "; }
inline std::string perturb_tag(std::size_t i) { return "[PERTURB:" + std::to_string(i) + "] "; }

/// Splits a leading "[KIND:value] " tag off a text.
inline std::optional<std::pair<std::string, std::string>> split_tag(std::string_view text, std::string_view kind) {
    const std::string open = "[" + std::string(kind) + ":";
    if (!text.starts_with(open)) return std::nullopt;
    const auto close = text.find("] ", open.size());
    if (close == std::string_view::npos) return std::nullopt;
    return std::make_pair(std::string(text.substr(open.size(), close - open.size())),
                          std::string(text.substr(close + 2)));
}

/// Deterministic stand-in for every model purpose:
///   tagger      -> the context drawn for the query from derive_seed(seed, query)
///   rewriter    -> "[ARM:name] query"
///   answerer    -> a reference answer w.p. the arm's mean reward, else a distractor
///   judge       -> CORRECT iff the candidate equals a reference
///   perturber   -> five "[PERTURB:i] query" variants
///   equivalence -> EQUIVALENT unless the variant is marked invalid
/// Queries without an arm tag are answered by the NoRewrite row when the
/// environment has six arms, and otherwise follow the record's
/// `unanswerable` / `failing_perturbations` settings. Random draws are keyed
/// by request content and sample_index; the backend holds no mutable state.
class SyntheticBackend : public gateway::Backend {
public:
    SyntheticBackend(EnvSpec spec, std::vector<SyntheticRecord> records, SyntheticOptions options = {})
        : env_(std::move(spec)), options_(options) {
        for (auto& r : records) {
            require(!r.references.empty(), "synthetic record needs a reference answer");
            const std::string q = r.query;
            records_[q] = std::move(r);
        }
    }

    const Env& env() const noexcept { return env_; }

    /// The context the tagger reports for a query.
    ContextVector context_for(std::string_view query) const {
        Rng rng(derive_seed(env_.spec().seed, query));
        return env_.sample_context_from(rng);
    }

    const SyntheticRecord& record(std::string_view query) const {
        auto it = records_.find(std::string(query));
        if (it == records_.end()) throw ProtocolError("synthetic backend has no record for query '" + std::string(query) + "'");
        return it->second;
    }

    /// Probability of a correct answer for a (possibly tagged) question.
    double answer_probability(std::string_view question) const {
        if (auto tagged = split_tag(question, "ARM")) {
            const auto arm = prompts::arm_from_name(tagged->first);
            if (!arm) throw ProtocolError("unknown arm tag '" + tagged->first + "'");
            const auto idx = static_cast<std::size_t>(*arm);
            require(idx < env_.arms(), "arm tag beyond the environment's arm count");
            return env_.mean_reward(context_for(tagged->second), idx);
        }
        if (auto tagged = split_tag(question, "PERTURB")) {
            const std::size_t i = std::stoul(tagged->first);
            return i < record(tagged->second).failing_perturbations ? 0.0 : 1.0;
        }
        if (env_.arms() > prompts::kNumRewriteArms)
            return env_.mean_reward(context_for(question), static_cast<std::size_t>(prompts::ArmId::NoRewrite));
        return record(question).unanswerable ? 0.0 : 1.0;
    }

    gateway::ChatResponse complete(const gateway::ChatRequest& req) override {
        gateway::ChatResponse out;
        switch (req.purpose) {
        case gateway::Purpose::Tagger: out.content = tag(req); break;
        case gateway::Purpose::Rewriter: out.content = rewrite(req); break;
        case gateway::Purpose::Answerer: out.content = answer(req); break;
        case gateway::Purpose::Judge: out.content = grade(req); break;
        case gateway::Purpose::Perturber: out.content = perturb(req); break;
        case gateway::Purpose::Equivalence: out.content = equivalence(req); break;
        default: throw ProtocolError("synthetic backend cannot serve this purpose");
        }
        out.latency_ms = 1.0;
        return out;
    }

private:
    /// Uniform draw that depends only on the request, so identical requests
    /// (and cached replays of them) always agree.
    double keyed_uniform(std::string_view kind, std::string_view text, int sample_index) const {
        std::string tag(kind);
        tag += '|';
        tag += std::to_string(sample_index);
        tag += '|';
        tag += text;
        return Rng(derive_seed(env_.spec().seed, tag)).uniform();
    }

    static std::string need_section(const gateway::ChatRequest& req, std::string_view title) {
        auto s = prompts::section(req.content_of("user"), title);
        if (!s) throw ProtocolError("synthetic backend: request lacks a '" + std::string(title) + "' section");
        return *s;
    }

    std::string tag(const gateway::ChatRequest& req) const {
        return features_to_json(context_for(need_section(req, prompts::kQuery))).dump();
    }

    std::string rewrite(const gateway::ChatRequest& req) const {
        const std::string query = req.content_of("user");
        const std::string system = req.content_of("system");
        for (std::size_t i = 0; i < prompts::kNumRewriteArms; ++i) {
            const auto arm = static_cast<prompts::ArmId>(i);
            if (prompts::render_prompt(arm, query) == system) return arm_tag(prompts::arm_name(arm)) + query;
        }
        throw ProtocolError("synthetic backend: rewrite prompt matches no arm template");
    }

    std::string answer(const gateway::ChatRequest& req) const {
        const std::string question = need_section(req, prompts::kQuestion);
        const double p = answer_probability(question);
        std::string base = question;
        if (auto t = split_tag(question, "ARM")) base = t->second;
        if (auto t = split_tag(question, "PERTURB")) base = t->second;
        const auto& rec = record(base);
        const double u = keyed_uniform("answer", question, req.sample_index);
        return u < p ? rec.references.front() : std::string(kDistractor);
    }

    std::string grade(const gateway::ChatRequest& req) const {
        const auto refs = prompts::parse_reference_list(need_section(req, prompts::kReferences));
        const std::string cand = gateway::trim(need_section(req, prompts::kCandidate));
        bool ok = std::any_of(refs.begin(), refs.end(), [&](const std::string& r) { return gateway::trim(r) == cand; });
        if (options_.judge_flip_prob > 0.0 &&
            keyed_uniform("judge", req.content_of("user"), req.sample_index) < options_.judge_flip_prob)
            ok = !ok;
        return ok ? "CORRECT" : "INCORRECT";
    }

    std::string perturb(const gateway::ChatRequest& req) const {
        const std::string query = need_section(req, prompts::kQuery);
        nlohmann::json list = nlohmann::json::array();
        for (std::size_t i = 0; i < prompts::kNumPerturbations; ++i) list.push_back(perturb_tag(i) + query);
        return nlohmann::json{{"perturbations", list}}.dump();
    }

    std::string equivalence(const gateway::ChatRequest& req) const {
        const std::string original = need_section(req, prompts::kOriginal);
        const std::string perturbed = need_section(req, prompts::kPerturbed);
        auto t = split_tag(perturbed, "PERTURB");
        if (!t || t->second != original) return "NOT_EQUIVALENT";
        const auto& rec = record(original);
        return rec.invalid_perturbations.contains(std::stoul(t->first)) ? "NOT_EQUIVALENT" : "EQUIVALENT";
    }

    Env env_;
    SyntheticOptions options_;
    std::unordered_map<std::string, SyntheticRecord> records_;
};

} // namespace rlab::env
