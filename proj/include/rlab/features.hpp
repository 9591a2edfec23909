#pragma once

// Linguistic feature schema and the binary context vector built from it.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "rlab/error.hpp"

namespace rlab {

inline constexpr std::size_t kNumFeatures = 17;
inline constexpr int kFeatureSchemaVersion = 1;

struct FeatureDescriptor {
    std::string_view name;
    std::string_view definition;
    std::string_view example;
};

/// Canonical, versioned feature order. Never reorder: logs, cached tagger
/// responses and exported weights all index into this table.
inline constexpr std::array<FeatureDescriptor, kNumFeatures> kFeatureSchema{{
    {"Anaphora", "Presence of pronouns or references requiring external context.",
     "\"What about that one?\" (Unclear reference)"},
    {"Subordination", "Measures the presence of multiple subordinate clauses",
     "\"While I was walking home, I saw a cat that looked just like my friend's.\""},
    {"Mismatch", "Mismatch between the query's intended output and its actual structure.",
     "\"Find me this paragraph in this document\" (When document isn't given, this query cannot be answered)"},
    {"Presupposition", "Unstated assumptions embedded in the query.",
     "\"Who is the musician that developed neural networks?\" (Assumes such a musician exists)"},
    {"Pragmatics", "Captures context-dependent meanings beyond literal interpretation.",
     "\"Can you pass the salt?\" (A request, not a literal ability)"},
    {"Rarity", "Use of rare or niche terminology.",
     "\"What are the ramifications of quantum decoherence?\" (Uses low-frequency terms)"},
    {"Negation", "Presence of negation words (not, never).", "\"Is it not possible to do this?\""},
    {"Superlative", "Detection of superlative expressions (biggest, fastest).", "\"What is the fastest algorithm?\""},
    {"Polysemy", "Presence of ambiguous words with multiple related meanings.",
     "\"Explain how a bank operates.\" (Ambiguity: financial institution vs. riverbank)"},
    {"Answerability", "Assesses whether the query has a verifiable answer.",
     "\"What is the exact number of galaxies?\" (Unanswerable)"},
    {"Excessive", "Evaluates whether a query is overloaded with information, potentially distracting the model.",
     "\"Can you explain how convolutional neural networks work, including all mathematical formulas?\""},
    {"Subjectivity", "Query requires the degree of opinion or personal bias", "\"What is the best programming language?\""},
    {"Ambiguity", "Highly ambiguous context, task, and wording", "\"Tell me about history.\" (Too broad)"},
    {"Grounding", "Evaluates how clearly the query's purpose is expressed.",
     "\"How does reinforcement learning optimize control in robotics?\" (Clear intent)"},
    {"Constraints", "Identifies explicit constraints (time, location, conditions) provided in the query.",
     "\"What was the inflation rate in the US in 2023?\""},
    {"Entities", "Checks for the inclusion of verifiable named entities.", "\"Who founded OpenAI?\""},
    {"Specialization", "Determines whether the query belongs to a specialized domain (e.g., finance, law).",
     "\"What are the legal implications of the GDPR ruling?\""},
}};

inline std::optional<std::size_t> feature_index(std::string_view name) {
    for (std::size_t i = 0; i < kNumFeatures; ++i)
        if (kFeatureSchema[i].name == name) return i;
    return std::nullopt;
}

/// Binary linguistic features of one query, optionally extended by a
/// constant-1 bias coordinate when encoded for a linear policy.
struct ContextVector {
    std::array<bool, kNumFeatures> features{};
    bool bias = true;

    std::size_t dimension() const noexcept { return kNumFeatures + (bias ? 1 : 0); }

    bool operator==(const ContextVector&) const = default;

    /// Features as a '0'/'1' string in schema order.
    std::string bits() const {
        std::string s(kNumFeatures, '0');
        for (std::size_t i = 0; i < kNumFeatures; ++i)
            if (features[i]) s[i] = '1';
        return s;
    }

    static ContextVector from_bits(std::string_view bits, bool bias = true) {
        require(bits.size() == kNumFeatures, "feature bit string must have 17 characters");
        ContextVector v;
        v.bias = bias;
        for (std::size_t i = 0; i < kNumFeatures; ++i) {
            require(bits[i] == '0' || bits[i] == '1', "feature bit string must contain only 0/1");
            v.features[i] = bits[i] == '1';
        }
        return v;
    }
};

inline Eigen::VectorXd encode_context(const ContextVector& v) {
    Eigen::VectorXd x(v.dimension());
    for (std::size_t i = 0; i < kNumFeatures; ++i) x[static_cast<Eigen::Index>(i)] = v.features[i] ? 1.0 : 0.0;
    if (v.bias) x[kNumFeatures] = 1.0;
    return x;
}

inline ContextVector decode_context(const Eigen::VectorXd& x) {
    require(x.size() == static_cast<Eigen::Index>(kNumFeatures) ||
                x.size() == static_cast<Eigen::Index>(kNumFeatures + 1),
            "encoded context must have dimension 17 or 18");
    ContextVector v;
    v.bias = x.size() == static_cast<Eigen::Index>(kNumFeatures + 1);
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        const double c = x[static_cast<Eigen::Index>(i)];
        require(c == 0.0 || c == 1.0, "encoded feature must be 0 or 1");
        v.features[i] = c == 1.0;
    }
    if (v.bias) require(x[kNumFeatures] == 1.0, "bias coordinate must be 1");
    return v;
}

} // namespace rlab
