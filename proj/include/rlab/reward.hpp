#pragma once

// Composite factuality reward and its validation tooling.
//
//   r = alpha * s_llm + beta * s_fuzz + gamma * s_bleu,   alpha + beta + gamma = 1
//
// s_llm is the judge's binary verdict, s_fuzz a token-set similarity based
// on insert/delete edit distance, and s_bleu a clipped unigram precision.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <sstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rlab/error.hpp"

namespace rlab::reward {

// ---- tokenization ----------------------------------------------------------

/// Lowercases, splits on whitespace and strips leading/trailing ASCII
/// punctuation from each token. Tokens that become empty are dropped.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        std::size_t b = 0, e = current.size();
        while (b < e && std::ispunct(static_cast<unsigned char>(current[b]))) ++b;
        while (e > b && std::ispunct(static_cast<unsigned char>(current[e - 1]))) --e;
        if (e > b) tokens.emplace_back(current.substr(b, e - b));
        current.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return tokens;
}

// ---- BLEU-1 ----------------------------------------------------------------

/// Clipped unigram precision, capped at 1; an empty candidate scores 0.
/// No brevity penalty.
inline double bleu1(std::span<const std::string> candidate, std::span<const std::string> reference) {
    if (candidate.empty()) return 0.0;
    std::map<std::string_view, std::size_t> ref_counts, cand_counts;
    for (const auto& w : reference) ++ref_counts[w];
    for (const auto& w : candidate) ++cand_counts[w];
    std::size_t matched = 0;
    for (const auto& [w, n] : cand_counts) {
        auto it = ref_counts.find(w);
        if (it != ref_counts.end()) matched += std::min(n, it->second);
    }
    return std::min(1.0, static_cast<double>(matched) / static_cast<double>(candidate.size()));
}

inline double bleu1(std::string_view candidate, std::string_view reference) {
    const auto c = tokenize(candidate);
    const auto r = tokenize(reference);
    return bleu1(c, r);
}

// ---- token-set similarity --------------------------------------------------

/// Edit distance allowing only insertions and deletions: |a| + |b| - 2 LCS(a, b).
inline std::size_t indel_distance(std::string_view a, std::string_view b) {
    if (a.size() < b.size()) std::swap(a, b);
    std::vector<std::size_t> row(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = 0;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = a[i - 1] == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
            diag = up;
        }
    }
    return a.size() + b.size() - 2 * row[b.size()];
}

/// 1 - indel / (|a| + |b|); two empty strings are identical.
inline double normalized_indel_similarity(std::string_view a, std::string_view b) {
    const std::size_t total = a.size() + b.size();
    if (total == 0) return 1.0;
    return 1.0 - static_cast<double>(indel_distance(a, b)) / static_cast<double>(total);
}

namespace detail {
inline std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out.push_back(' ');
        out += p;
    }
    return out;
}
inline std::string concat(const std::string& a, const std::string& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    return a + " " + b;
}
} // namespace detail

/// Token-set ratio on [0, 1]. With I the sorted intersection of the two
/// deduplicated token sets, A = I + (cand - ref) and B = I + (ref - cand),
/// returns the best normalized indel similarity among (A,B), (I,A), (I,B).
/// Both empty -> 1; exactly one empty -> 0.
inline double fuzzy_token_set(std::string_view candidate, std::string_view reference) {
    const auto ct = tokenize(candidate);
    const auto rt = tokenize(reference);
    const std::set<std::string> cs(ct.begin(), ct.end());
    const std::set<std::string> rs(rt.begin(), rt.end());
    if (cs.empty() && rs.empty()) return 1.0;
    if (cs.empty() || rs.empty()) return 0.0;

    std::vector<std::string> inter, only_c, only_r;
    std::set_intersection(cs.begin(), cs.end(), rs.begin(), rs.end(), std::back_inserter(inter));
    std::set_difference(cs.begin(), cs.end(), rs.begin(), rs.end(), std::back_inserter(only_c));
    std::set_difference(rs.begin(), rs.end(), cs.begin(), cs.end(), std::back_inserter(only_r));

    const std::string i = detail::join(inter);
    const std::string a = detail::concat(i, detail::join(only_c));
    const std::string b = detail::concat(i, detail::join(only_r));
    double best = normalized_indel_similarity(a, b);
    if (!i.empty()) {
        best = std::max(best, normalized_indel_similarity(i, a));
        best = std::max(best, normalized_indel_similarity(i, b));
    }
    return best;
}

/// Max of a text score over several references.
template <class Score>
double best_over_references(std::string_view candidate, std::span<const std::string> references, Score score) {
    require(!references.empty(), "at least one reference answer is required");
    double best = 0.0;
    for (const auto& r : references) best = std::max(best, score(candidate, std::string_view(r)));
    return best;
}

// ---- composite reward ------------------------------------------------------

struct RewardWeights {
    double alpha = 0.6;
    double beta = 0.3;
    double gamma = 0.1;

    void validate() const {
        if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
            throw ConfigError("reward_weights", "weights must be nonnegative");
        if (std::abs(alpha + beta + gamma - 1.0) > 1e-9)
            throw ConfigError("reward_weights", "weights must sum to 1");
    }
};

struct RewardBreakdown {
    double s_llm = 0.0;
    double s_fuzz = 0.0;
    double s_bleu = 0.0;
    RewardWeights weights;
    double r = 0.0;
};

inline double combine(double s_llm, double s_fuzz, double s_bleu, const RewardWeights& w) {
    return w.alpha * s_llm + w.beta * s_fuzz + w.gamma * s_bleu;
}

inline RewardBreakdown composite_reward(double s_llm, double s_fuzz, double s_bleu, const RewardWeights& w) {
    require(s_llm == 0.0 || s_llm == 1.0, "s_llm must be 0 or 1");
    require(s_fuzz >= 0.0 && s_fuzz <= 1.0, "s_fuzz must lie in [0, 1]");
    require(s_bleu >= 0.0 && s_bleu <= 1.0, "s_bleu must lie in [0, 1]");
    w.validate();
    RewardBreakdown out{s_llm, s_fuzz, s_bleu, w, 0.0};
    // Rounding can push a convex combination of ones a hair above 1.
    out.r = std::clamp(combine(s_llm, s_fuzz, s_bleu, w), 0.0, 1.0);
    return out;
}

// ---- ROC-AUC ---------------------------------------------------------------

struct LabeledScore {
    double score = 0.0;
    bool correct = false;
};

/// Mann-Whitney form: P(score_correct > score_wrong) + 0.5 P(equal),
/// computed exactly with mid-ranks in O(n log n).
inline double roc_auc(std::span<const LabeledScore> items) {
    std::vector<LabeledScore> sorted(items.begin(), items.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
    double n_pos = 0.0, n_neg = 0.0, rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j].score == sorted[i].score) ++j;
        // ranks i+1 .. j share the mid-rank
        const double mid = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (sorted[k].correct) {
                rank_sum_pos += mid;
                n_pos += 1.0;
            } else {
                n_neg += 1.0;
            }
        }
        i = j;
    }
    if (n_pos == 0.0 || n_neg == 0.0) throw ContractError("roc_auc is undefined without both classes");
    return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

// ---- simplex sweep ---------------------------------------------------------

struct ComponentScores {
    double s_llm = 0.0;
    double s_fuzz = 0.0;
    double s_bleu = 0.0;
    bool correct = false;
};

struct SweepCell {
    RewardWeights weights;
    double auc = 0.0;
    bool top1pct = false;
};

/// Cells whose AUC is within this relative distance of the best cell form
/// the top-1% frontier.
inline constexpr double kFrontierTolerance = 0.01;

/// AUC of the combined score at every lattice point of the weight simplex
/// with spacing `step`, sorted by AUC (descending, stable in lattice order).
inline std::vector<SweepCell> simplex_sweep(std::span<const ComponentScores> items, double step = 0.05) {
    if (!(step > 0.0 && step <= 1.0)) throw ConfigError("grid_step", "must lie in (0, 1]");
    const double divisions = 1.0 / step;
    const auto n = static_cast<int>(std::lround(divisions));
    if (std::abs(divisions - n) > 1e-9) throw ConfigError("grid_step", "must divide 1 evenly");

    std::vector<SweepCell> cells;
    std::vector<LabeledScore> combined(items.size());
    for (int i = n; i >= 0; --i) {
        for (int j = n - i; j >= 0; --j) {
            const int k = n - i - j;
            RewardWeights w{static_cast<double>(i) / n, static_cast<double>(j) / n, static_cast<double>(k) / n};
            for (std::size_t t = 0; t < items.size(); ++t)
                combined[t] = {combine(items[t].s_llm, items[t].s_fuzz, items[t].s_bleu, w), items[t].correct};
            cells.push_back({w, roc_auc(combined), false});
        }
    }
    std::stable_sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return a.auc > b.auc; });
    const double best = cells.front().auc;
    for (auto& c : cells) c.top1pct = c.auc >= best * (1.0 - kFrontierTolerance);
    return cells;
}

/// CSV with columns alpha,beta,gamma,auc,top1pct_flag.
inline std::string sweep_csv(std::span<const SweepCell> cells) {
    std::ostringstream out;
    out.precision(17);
    out << "alpha,beta,gamma,auc,top1pct_flag\n";
    for (const auto& c : cells)
        out << c.weights.alpha << ',' << c.weights.beta << ',' << c.weights.gamma << ',' << c.auc << ','
            << (c.top1pct ? 1 : 0) << '\n';
    return out.str();
}

// ---- judge agreement -------------------------------------------------------

struct AgreementStats {
    double agreement = 0.0;
    double kappa = 0.0;
    double mcc = 0.0;
    bool degenerate = false;  // chance agreement p_e == 1
};

/// Percent agreement, Cohen's kappa and Matthews correlation between two
/// binary label sequences. Kappa is reported as 0 when p_e == 1; MCC as 0
/// when any confusion-matrix margin is empty.
inline AgreementStats agreement_stats(std::span<const int> a, std::span<const int> b) {
    require(a.size() == b.size(), "agreement_stats: label sequences differ in length");
    require(!a.empty(), "agreement_stats: empty label sequences");
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        require((a[i] == 0 || a[i] == 1) && (b[i] == 0 || b[i] == 1), "agreement_stats: labels must be 0/1");
        if (a[i] == 1 && b[i] == 1) ++tp;
        else if (a[i] == 0 && b[i] == 0) ++tn;
        else if (a[i] == 0 && b[i] == 1) ++fp;
        else ++fn;
    }
    const double n = tp + tn + fp + fn;
    AgreementStats s;
    s.agreement = (tp + tn) / n;
    const double a1 = (tp + fn) / n, b1 = (tp + fp) / n;
    const double pe = a1 * b1 + (1.0 - a1) * (1.0 - b1);
    if (pe >= 1.0) {
        s.degenerate = true;
        s.kappa = 0.0;
    } else {
        s.kappa = (s.agreement - pe) / (1.0 - pe);
    }
    const double denom = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    s.mcc = denom > 0.0 ? (tp * tn - fp * fn) / denom : 0.0;
    return s;
}

} // namespace rlab::reward
