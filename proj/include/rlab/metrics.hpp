#pragma once

// Evaluation metrics over round logs: exploration-adjusted reward,
// cumulative regret, win rate, accuracy tables, and per-arm feature
// analyses (uplift, variance, inter-arm context divergence).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlab/bandit/policy.hpp"
#include "rlab/error.hpp"
#include "rlab/features.hpp"
#include "rlab/reward.hpp"

namespace rlab::metrics {

struct RoundLog {
    std::uint64_t t = 0;
    std::string query_id;
    ContextVector context;
    std::size_t arm = 0;
    double reward = 0.0;
    std::optional<reward::RewardBreakdown> breakdown;
    std::optional<double> oracle;
    std::optional<double> baseline;
    std::string policy;
    std::string dataset;
};

using Cell = std::optional<double>;  // nullopt = no data for this cell
using CellMatrix = std::vector<std::vector<Cell>>;

// ---- exploration-adjusted reward ------------------------------------------

/// (-sum p ln p) / ln K with 0 ln 0 = 0.
inline double normalized_entropy(std::span<const std::uint64_t> counts) {
    require(counts.size() >= 2, "normalized entropy needs at least two arms");
    std::uint64_t total = 0;
    for (auto c : counts) total += c;
    require(total >= 1, "normalized entropy needs at least one count");
    double h = 0.0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h / std::log(static_cast<double>(counts.size()));
}

/// H_t from cumulative arm counts through each round, in log order.
inline std::vector<double> entropy_trajectory(std::span<const RoundLog> logs, std::size_t arms) {
    std::vector<std::uint64_t> counts(arms, 0);
    std::vector<double> h;
    h.reserve(logs.size());
    for (const auto& r : logs) {
        require(r.arm < arms, "logged arm out of range");
        ++counts[r.arm];
        h.push_back(normalized_entropy(counts));
    }
    return h;
}

/// sum_t (r_t + lambda H_t).
inline double exploration_adjusted_reward(std::span<const RoundLog> logs, std::size_t arms, double lambda = 0.1) {
    require(lambda >= 0.0, "lambda must be nonnegative");
    const auto h = entropy_trajectory(logs, arms);
    double total = 0.0;
    for (std::size_t i = 0; i < logs.size(); ++i) total += logs[i].reward + lambda * h[i];
    return total;
}

inline double cumulative_reward(std::span<const RoundLog> logs) {
    double s = 0.0;
    for (const auto& r : logs) s += r.reward;
    return s;
}

// ---- regret ----------------------------------------------------------------

/// Running sum of r* - r after each round.
inline std::vector<double> regret_curve(std::span<const RoundLog> logs) {
    std::vector<double> curve;
    curve.reserve(logs.size());
    double acc = 0.0;
    for (const auto& r : logs) {
        if (!r.oracle)
            throw ContractError("round " + std::to_string(r.t) +
                                " has no oracle reward; enable evaluate_all_arms or use the synthetic environment");
        acc += *r.oracle - r.reward;
        curve.push_back(acc);
    }
    return curve;
}

inline double cumulative_regret(std::span<const RoundLog> logs) {
    const auto c = regret_curve(logs);
    return c.empty() ? 0.0 : c.back();
}

inline double mean(std::span<const double> xs) {
    require(!xs.empty(), "mean of an empty list");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

// ---- win rate --------------------------------------------------------------

struct WinStats {
    double win = 0.0;   // percent of rounds with r_policy > r_base
    double tie = 0.0;
    double loss = 0.0;
    std::size_t n = 0;
};

inline WinStats win_stats_from_pairs(std::span<const std::pair<double, double>> pairs) {
    require(!pairs.empty(), "win rate needs at least one aligned round");
    std::size_t w = 0, t = 0, l = 0;
    for (const auto& [p, b] : pairs) {
        if (p > b) ++w;
        else if (p == b) ++t;
        else ++l;
    }
    const double n = static_cast<double>(pairs.size());
    return {100.0 * w / n, 100.0 * t / n, 100.0 * l / n, pairs.size()};
}

/// Position-aligned comparison; each pair must concern the same query.
inline WinStats win_rate(std::span<const RoundLog> policy, std::span<const RoundLog> baseline) {
    require(policy.size() == baseline.size(), "win rate: logs differ in length");
    std::vector<std::pair<double, double>> pairs;
    pairs.reserve(policy.size());
    for (std::size_t i = 0; i < policy.size(); ++i) {
        if (policy[i].query_id != baseline[i].query_id)
            throw ContractError("win rate: round " + std::to_string(i) + " compares query '" + policy[i].query_id +
                                "' with '" + baseline[i].query_id + "'");
        pairs.emplace_back(policy[i].reward, baseline[i].reward);
    }
    return win_stats_from_pairs(pairs);
}

/// Uses the baseline reward recorded inside each round.
inline WinStats win_rate_inline(std::span<const RoundLog> logs) {
    std::vector<std::pair<double, double>> pairs;
    for (const auto& r : logs) {
        if (!r.baseline) throw ContractError("round " + std::to_string(r.t) + " has no baseline reward");
        pairs.emplace_back(r.reward, *r.baseline);
    }
    return win_stats_from_pairs(pairs);
}

// ---- accuracy table --------------------------------------------------------

struct AccuracyTable {
    std::vector<std::string> datasets;
    std::vector<std::string> policies;
    std::vector<std::vector<Cell>> accuracy;  // datasets x policies
    std::vector<double> wins;                 // per policy
    std::vector<Cell> macro;                  // per policy, unweighted mean over datasets
};

/// Row winners get one win; m policies tied for a row maximum get 1/m each
/// (0.5 for the usual two-way tie). Missing cells never win and make that
/// policy's macro average missing.
inline AccuracyTable accuracy_table(const std::map<std::string, std::map<std::string, double>>& by_dataset,
                                    double tie_tolerance = 1e-12) {
    AccuracyTable t;
    std::map<std::string, std::size_t> policy_index;
    for (const auto& [ds, row] : by_dataset) {
        t.datasets.push_back(ds);
        for (const auto& [pol, acc] : row) {
            (void)acc;
            policy_index.emplace(pol, 0);
        }
    }
    for (auto& [pol, idx] : policy_index) {
        idx = t.policies.size();
        t.policies.push_back(pol);
    }
    const std::size_t P = t.policies.size();
    t.wins.assign(P, 0.0);
    t.macro.assign(P, Cell{});
    std::vector<double> sums(P, 0.0);
    std::vector<std::size_t> present(P, 0);
    for (const auto& ds : t.datasets) {
        const auto& row = by_dataset.at(ds);
        std::vector<Cell> cells(P);
        double best = -1.0;
        for (const auto& [pol, acc] : row) {
            cells[policy_index[pol]] = acc;
            best = std::max(best, acc);
            sums[policy_index[pol]] += acc;
            ++present[policy_index[pol]];
        }
        std::vector<std::size_t> leaders;
        for (std::size_t p = 0; p < P; ++p)
            if (cells[p] && std::abs(*cells[p] - best) <= tie_tolerance) leaders.push_back(p);
        for (auto p : leaders) t.wins[p] += 1.0 / static_cast<double>(leaders.size());
        t.accuracy.push_back(std::move(cells));
    }
    for (std::size_t p = 0; p < P; ++p)
        if (present[p] == t.datasets.size() && present[p] > 0) t.macro[p] = sums[p] / static_cast<double>(present[p]);
    return t;
}

/// Mean judge verdict per (dataset, policy) over a set of logs.
inline std::map<std::string, std::map<std::string, double>> accuracy_by_dataset(std::span<const RoundLog> logs) {
    std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> acc;
    for (const auto& r : logs) {
        require(r.breakdown.has_value(), "accuracy needs the reward breakdown");
        auto& cell = acc[r.dataset][r.policy];
        cell.first += r.breakdown->s_llm;
        ++cell.second;
    }
    std::map<std::string, std::map<std::string, double>> out;
    for (const auto& [ds, row] : acc)
        for (const auto& [pol, c] : row) out[ds][pol] = c.first / static_cast<double>(c.second);
    return out;
}

// ---- arm usage -------------------------------------------------------------

inline std::vector<double> arm_frequencies(std::span<const RoundLog> logs, std::size_t arms) {
    std::vector<double> f(arms, 0.0);
    if (logs.empty()) return f;
    for (const auto& r : logs) {
        require(r.arm < arms, "logged arm out of range");
        f[r.arm] += 1.0;
    }
    for (double& v : f) v /= static_cast<double>(logs.size());
    return f;
}

// ---- per-feature analyses --------------------------------------------------

/// E[r | arm=a, f_i=1] - E[r | arm=a, f_i=0]; missing when either side is empty.
inline CellMatrix feature_uplift(std::span<const RoundLog> logs, std::size_t arms) {
    std::vector<std::array<double, kNumFeatures>> sum_on(arms), sum_off(arms);
    std::vector<std::array<std::size_t, kNumFeatures>> n_on(arms), n_off(arms);
    for (std::size_t a = 0; a < arms; ++a) {
        sum_on[a].fill(0.0);
        sum_off[a].fill(0.0);
        n_on[a].fill(0);
        n_off[a].fill(0);
    }
    for (const auto& r : logs) {
        require(r.arm < arms, "logged arm out of range");
        for (std::size_t i = 0; i < kNumFeatures; ++i) {
            if (r.context.features[i]) {
                sum_on[r.arm][i] += r.reward;
                ++n_on[r.arm][i];
            } else {
                sum_off[r.arm][i] += r.reward;
                ++n_off[r.arm][i];
            }
        }
    }
    CellMatrix out(arms, std::vector<Cell>(kNumFeatures));
    for (std::size_t a = 0; a < arms; ++a)
        for (std::size_t i = 0; i < kNumFeatures; ++i)
            if (n_on[a][i] > 0 && n_off[a][i] > 0)
                out[a][i] = sum_on[a][i] / static_cast<double>(n_on[a][i]) -
                            sum_off[a][i] / static_cast<double>(n_off[a][i]);
    return out;
}

/// Rate of each feature among rounds where the arm was chosen; missing for
/// arms never chosen.
inline CellMatrix feature_rates_by_arm(std::span<const RoundLog> logs, std::size_t arms) {
    std::vector<std::array<std::size_t, kNumFeatures>> ones(arms);
    std::vector<std::size_t> n(arms, 0);
    for (auto& o : ones) o.fill(0);
    for (const auto& r : logs) {
        require(r.arm < arms, "logged arm out of range");
        ++n[r.arm];
        for (std::size_t i = 0; i < kNumFeatures; ++i) ones[r.arm][i] += r.context.features[i];
    }
    CellMatrix out(arms, std::vector<Cell>(kNumFeatures));
    for (std::size_t a = 0; a < arms; ++a)
        if (n[a] > 0)
            for (std::size_t i = 0; i < kNumFeatures; ++i)
                out[a][i] = static_cast<double>(ones[a][i]) / static_cast<double>(n[a]);
    return out;
}

/// Population variance p(1 - p) of each feature under each arm.
inline CellMatrix feature_variance_by_arm(std::span<const RoundLog> logs, std::size_t arms) {
    auto rates = feature_rates_by_arm(logs, arms);
    for (auto& row : rates)
        for (auto& c : row)
            if (c) c = *c * (1.0 - *c);
    return rates;
}

inline double bernoulli_kl(double p, double q) {
    double kl = 0.0;
    if (p > 0.0) kl += p * std::log(p / q);
    if (p < 1.0) kl += (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
    return kl;
}

/// Symmetric KL between arms' product-Bernoulli context distributions, with
/// add-eps smoothing p = (ones + eps) / (n + 2 eps). Pairs involving an arm
/// that was never chosen are missing.
inline CellMatrix inter_arm_context_kl(std::span<const RoundLog> logs, std::size_t arms, double eps = 1e-3) {
    require(eps > 0.0, "KL smoothing must be positive");
    std::vector<std::array<std::size_t, kNumFeatures>> ones(arms);
    std::vector<std::size_t> n(arms, 0);
    for (auto& o : ones) o.fill(0);
    for (const auto& r : logs) {
        require(r.arm < arms, "logged arm out of range");
        ++n[r.arm];
        for (std::size_t i = 0; i < kNumFeatures; ++i) ones[r.arm][i] += r.context.features[i];
    }
    auto rate = [&](std::size_t a, std::size_t i) {
        return (static_cast<double>(ones[a][i]) + eps) / (static_cast<double>(n[a]) + 2.0 * eps);
    };
    CellMatrix out(arms, std::vector<Cell>(arms));
    for (std::size_t a = 0; a < arms; ++a) {
        if (n[a] == 0) continue;
        out[a][a] = 0.0;
        for (std::size_t b = a + 1; b < arms; ++b) {
            if (n[b] == 0) continue;
            double s = 0.0;
            for (std::size_t i = 0; i < kNumFeatures; ++i) {
                const double p = rate(a, i), q = rate(b, i);
                s += bernoulli_kl(p, q) + bernoulli_kl(q, p);
            }
            out[a][b] = s;
            out[b][a] = s;
        }
    }
    return out;
}

// ---- learned weights -------------------------------------------------------

struct ThetaTable {
    std::vector<std::string> columns;  // feature names, then "bias" when present
    std::vector<std::vector<double>> rows;  // one per arm
};

inline std::vector<std::string> theta_columns(std::size_t dim) {
    require(dim == kNumFeatures || dim == kNumFeatures + 1, "theta dimension must be 17 or 18");
    std::vector<std::string> cols;
    for (const auto& f : kFeatureSchema) cols.emplace_back(f.name);
    if (dim == kNumFeatures + 1) cols.emplace_back("bias");
    return cols;
}

/// Per-arm weights of a contextual-linear policy, labeled by feature.
inline ThetaTable theta_table(const bandit::Policy& policy) {
    if (!policy.contextual())
        throw ContractError("policy '" + std::string(policy.name()) + "' is not contextual; no weights to export");
    const auto theta = policy.theta();
    ThetaTable t{theta_columns(static_cast<std::size_t>(theta.cols())), {}};
    for (Eigen::Index a = 0; a < theta.rows(); ++a) {
        std::vector<double> row(static_cast<std::size_t>(theta.cols()));
        for (Eigen::Index j = 0; j < theta.cols(); ++j) row[static_cast<std::size_t>(j)] = theta(a, j);
        t.rows.push_back(std::move(row));
    }
    return t;
}

} // namespace rlab::metrics
