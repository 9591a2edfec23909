#pragma once

// Prompt texts used by every model call. The five rewrite templates are
// fixed data; the judge, equivalence, tagger, answerer and perturbation
// prompts are this library's own wording and are versioned here.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlab/error.hpp"
#include "rlab/features.hpp"

namespace rlab::prompts {

inline constexpr int kPromptVersion = 1;
inline constexpr std::string_view kPlaceholder = "{original_query}";

// ---- rewrite arms ----------------------------------------------------------

enum class ArmId : std::size_t { Paraphrase = 0, Simplify, Disambiguate, Expand, ClarifyTerms, NoRewrite };

inline constexpr std::size_t kNumRewriteArms = 5;

inline constexpr std::array<std::string_view, 6> kArmNames{"Paraphrase", "Simplify",     "Disambiguate",
                                                           "Expand",     "ClarifyTerms", "NoRewrite"};

inline constexpr std::array<std::string_view, kNumRewriteArms> kArmTemplates{
    "You are a rewriting module. You will be given a user query: {original_query}. Rephrase it to improve clarity "
    "and introduce lexical diversity while strictly preserving semantic meaning, entities (including "
    "casing/accents), numbers, units, and constraints. Do not add or remove information. Output only the "
    "rewritten query.",

    "You are a rewriting module. You will be given a user query: {original_query}. Simplify it by removing nested "
    "clauses and complex syntax. Use short, concrete phrasing (S–V–O order), keep all entities, numbers, "
    "units, and constraints, and avoid changing intent. Do not invent details. Output only the simplified query.",

    "You are a rewriting module. You will be given a user query: {original_query}. Resolve vague references by "
    "replacing ambiguous pronouns (e.g., it/they/this) and temporal expressions with explicit, context-grounded "
    "referents and normalized dates. If a referent cannot be determined from the query alone, insert a bracketed "
    "placeholder (e.g., [ENTITY], [DATE]) rather than guessing. Preserve the original intent. Output only the "
    "disambiguated query.",

    "You are a rewriting module. You will be given a user query: {original_query}. Expand it by making implicit "
    "context explicit and adding salient, non-speculative attributes (e.g., scope, timeframe, location, units) "
    "that are entailed by the query. If crucial specifics are missing, insert neutral bracketed placeholders "
    "(e.g., [TIMEFRAME], [LOCATION]) instead of fabricating facts. Preserve the original intent and constraints. "
    "Output only the expanded query.",

    "You are a rewriting module. You will be given a user query: {original_query}. Identify domain-specific "
    "jargon or terms of art and add concise parenthetical glosses (e.g., “term (brief definition)”) "
    "where the meaning is standard and unambiguous. If uncertain, use a bracketed clarification placeholder "
    "(e.g., [DEFINE: TERM]) rather than guessing. Do not alter intent, entities, or constraints. Output only the "
    "clarified query.",
};

inline std::string_view arm_name(ArmId arm) {
    const auto i = static_cast<std::size_t>(arm);
    require(i < kArmNames.size(), "unknown rewrite arm");
    return kArmNames[i];
}

inline std::optional<ArmId> arm_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kArmNames.size(); ++i)
        if (kArmNames[i] == name) return static_cast<ArmId>(i);
    return std::nullopt;
}

/// Arm list for a run: the five rewrite arms, plus NoRewrite when enabled.
inline std::vector<ArmId> enabled_arms(bool include_no_rewrite) {
    std::vector<ArmId> arms;
    for (std::size_t i = 0; i < kNumRewriteArms; ++i) arms.push_back(static_cast<ArmId>(i));
    if (include_no_rewrite) arms.push_back(ArmId::NoRewrite);
    return arms;
}

/// Substitutes the placeholder once. The query is inserted literally, so
/// braces inside it are never expanded.
inline std::string render_prompt(ArmId arm, std::string_view query) {
    const auto i = static_cast<std::size_t>(arm);
    if (i >= kNumRewriteArms) throw ContractError("arm '" + std::string(arm_name(arm)) + "' has no template");
    const std::string_view tpl = kArmTemplates[i];
    const auto pos = tpl.find(kPlaceholder);
    std::string out;
    out.reserve(tpl.size() + query.size());
    out.append(tpl.substr(0, pos));
    out.append(query);
    out.append(tpl.substr(pos + kPlaceholder.size()));
    return out;
}

// ---- section markers -------------------------------------------------------
// User messages are laid out as "### <Section>\n<body>\n\n" blocks so that
// both live models and the synthetic backend can read them.

inline constexpr std::string_view kQuestion = "Question";
inline constexpr std::string_view kReferences = "Reference answers";
inline constexpr std::string_view kCandidate = "Candidate answer";
inline constexpr std::string_view kPassage = "Passage";
inline constexpr std::string_view kChoices = "Choices";
inline constexpr std::string_view kQuery = "Query";
inline constexpr std::string_view kOriginal = "Original query";
inline constexpr std::string_view kPerturbed = "Perturbed query";

inline void append_section(std::string& out, std::string_view title, std::string_view body) {
    if (!out.empty()) out += "\n\n";
    out += "### ";
    out += title;
    out += '\n';
    out += body;
}

/// Body of the named section, or nullopt. A section ends at the next
/// "\n\n### " marker or at the end of the text.
inline std::optional<std::string> section(std::string_view text, std::string_view title) {
    const std::string header = "### " + std::string(title) + "\n";
    std::size_t pos = 0;
    while (true) {
        pos = text.find(header, pos);
        if (pos == std::string_view::npos) return std::nullopt;
        if (pos == 0 || (pos >= 2 && text.substr(pos - 2, 2) == "\n\n")) break;
        pos += header.size();
    }
    const std::size_t begin = pos + header.size();
    const std::size_t end = text.find("\n\n### ", begin);
    return std::string(text.substr(begin, end == std::string_view::npos ? std::string_view::npos : end - begin));
}

// ---- judge -----------------------------------------------------------------

inline constexpr std::string_view kJudgeSystem =
    "You are grading an answer to a question for factual correctness. You are given the question, one or more "
    "acceptable reference answers and a candidate answer. The candidate is correct if it states the same fact "
    "as any reference answer, even when worded differently or when it adds harmless detail. It is incorrect if "
    "it contradicts every reference, gives a different fact, or does not answer. Respond with exactly CORRECT "
    "or INCORRECT and nothing else.";

inline std::string judge_user(std::string_view question, const std::vector<std::string>& references,
                              std::string_view candidate) {
    std::string refs;
    for (const auto& r : references) {
        if (!refs.empty()) refs += '\n';
        refs += "- " + r;
    }
    std::string out;
    append_section(out, kQuestion, question);
    append_section(out, kReferences, refs);
    append_section(out, kCandidate, candidate);
    return out;
}

/// Reference list back from a judge message (one "- " item per line).
inline std::vector<std::string> parse_reference_list(std::string_view body) {
    std::vector<std::string> refs;
    std::size_t pos = 0;
    while (pos <= body.size()) {
        std::size_t end = body.find('\n', pos);
        if (end == std::string_view::npos) end = body.size();
        std::string_view line = body.substr(pos, end - pos);
        if (line.starts_with("- ")) refs.emplace_back(line.substr(2));
        pos = end + 1;
    }
    return refs;
}

// ---- semantic equivalence of perturbations ---------------------------------

inline constexpr std::string_view kEquivalenceSystem =
    "You compare two versions of a user query. Decide whether the perturbed query asks for exactly the same "
    "information as the original query, with the same entities, numbers, units and constraints. Differences in "
    "wording, word order or style are allowed. Respond with exactly EQUIVALENT or NOT_EQUIVALENT and nothing "
    "else.";

inline std::string equivalence_user(std::string_view original, std::string_view perturbed) {
    std::string out;
    append_section(out, kOriginal, original);
    append_section(out, kPerturbed, perturbed);
    return out;
}

// ---- lexical perturbations -------------------------------------------------

inline constexpr std::size_t kNumPerturbations = 5;

inline constexpr std::string_view kPerturbSystem =
    "You generate lexical perturbations of a user query. Produce exactly five variants that keep the meaning, "
    "entities, numbers, units and constraints of the query unchanged while varying word choice and word order. "
    "Do not answer the query. Respond with a JSON object of the form {\"perturbations\": [\"...\", \"...\", "
    "\"...\", \"...\", \"...\"]}.";

inline std::string perturb_user(std::string_view query) {
    std::string out;
    append_section(out, kQuery, query);
    return out;
}

// ---- feature tagger --------------------------------------------------------

inline std::string tagger_system() {
    std::string out =
        "You annotate user queries with binary linguistic features. For each feature below, decide whether it is "
        "present in the query (true) or absent (false).\n\nFeatures:\n";
    for (const auto& f : kFeatureSchema) {
        out += "- ";
        out += f.name;
        out += ": ";
        out += f.definition;
        out += " Example: ";
        out += f.example;
        out += '\n';
    }
    out += "\nRespond with a single JSON object with exactly these keys, each mapped to true or false: ";
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        if (i) out += ", ";
        out += '"';
        out += kFeatureSchema[i].name;
        out += '"';
    }
    out += ". Do not include any other text.";
    return out;
}

inline std::string tagger_user(std::string_view query) {
    std::string out;
    append_section(out, kQuery, query);
    return out;
}

// ---- answerer --------------------------------------------------------------

enum class Scenario { Extractive, Abstractive, MultipleChoice, Boolean };

inline std::string_view scenario_name(Scenario s) {
    switch (s) {
    case Scenario::Extractive: return "extractive";
    case Scenario::Abstractive: return "abstractive";
    case Scenario::MultipleChoice: return "multiple-choice";
    case Scenario::Boolean: return "boolean";
    }
    return "abstractive";
}

inline std::optional<Scenario> scenario_from_name(std::string_view name) {
    if (name == "extractive") return Scenario::Extractive;
    if (name == "abstractive") return Scenario::Abstractive;
    if (name == "multiple-choice") return Scenario::MultipleChoice;
    if (name == "boolean") return Scenario::Boolean;
    return std::nullopt;
}

inline std::string_view answerer_system(Scenario s) {
    switch (s) {
    case Scenario::Extractive:
        return "Answer the question using only the passage. Reply with the shortest span of the passage that "
               "answers the question, with no explanation.";
    case Scenario::MultipleChoice:
        return "Answer the multiple-choice question. Reply with the letter of the single best choice and nothing "
               "else.";
    case Scenario::Boolean:
        return "Answer the question with yes or no and nothing else.";
    case Scenario::Abstractive:
        break;
    }
    return "Answer the question truthfully and concisely in one or two sentences. If the question rests on a "
           "false premise, say so.";
}

inline std::string choice_letter(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

inline std::string answerer_user(Scenario s, std::string_view question, const std::vector<std::string>& choices,
                                 std::string_view passage) {
    std::string out;
    if (s == Scenario::Extractive && !passage.empty()) append_section(out, kPassage, passage);
    append_section(out, kQuestion, question);
    if (s == Scenario::MultipleChoice) {
        std::string list;
        for (std::size_t i = 0; i < choices.size(); ++i) {
            if (i) list += '\n';
            list += choice_letter(i) + ". " + choices[i];
        }
        append_section(out, kChoices, list);
    }
    return out;
}

} // namespace rlab::prompts
