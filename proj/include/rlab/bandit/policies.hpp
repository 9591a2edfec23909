#pragma once

// The bandit policies. Every policy exposes the same shape:
//
//   SelectionTrace select(const Vector& x, std::uint64_t t, Rng& rng) const;
//   void observe(const Vector& x, const SelectionTrace& trace, double reward);
//
// `select` never mutates the policy, `observe` touches only the statistics
// of `trace.chosen`. Non-contextual policies ignore `x`. State is held in
// public members so tests and exporters can inspect it directly.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "rlab/bandit/gram.hpp"
#include "rlab/bandit/primitives.hpp"
#include "rlab/error.hpp"
#include "rlab/random.hpp"

namespace rlab::bandit {

struct SelectionTrace {
    std::size_t chosen = 0;
    std::vector<double> scores;
    std::optional<std::vector<double>> probs;
    /// Raw random values consumed by the selection, in draw order.
    std::vector<double> rng_draws;
};

namespace detail {

inline void check_reward(double r) { require(r >= 0.0 && r <= 1.0, "reward must lie in [0, 1]"); }

inline void check_dim(const Vector& x, Eigen::Index d) {
    if (x.size() != d)
        throw ContractError("context dimension " + std::to_string(x.size()) + " does not match policy dimension " +
                            std::to_string(d));
}

inline void check_chosen(const SelectionTrace& trace, std::size_t K) {
    require(trace.chosen < K, "observed arm out of range");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Non-contextual

struct Exp3 {
    static constexpr std::string_view kName = "exp3";
    static constexpr bool kContextual = false;

    std::vector<double> weights;
    double gamma;

    Exp3(std::size_t arms, double gamma_) : weights(arms, 1.0), gamma(gamma_) {}

    std::size_t arms() const noexcept { return weights.size(); }

    SelectionTrace select(const Vector&, std::uint64_t, Rng& rng) const {
        SelectionTrace tr;
        auto p = exp3_probs(weights, gamma);
        const double u = rng.uniform();
        tr.rng_draws = {u};
        tr.chosen = sample_categorical(p, u);
        tr.scores = p;
        tr.probs = std::move(p);
        return tr;
    }

    void observe(const Vector&, const SelectionTrace& trace, double reward) {
        detail::check_chosen(trace, arms());
        require(trace.probs.has_value(), "exp3 observe needs the selection probabilities");
        exp3_update(weights, trace.chosen, (*trace.probs)[trace.chosen], reward, gamma);
    }
};

/// Follow-the-perturbed-leader on cumulative rewards with Gumbel(0, 1/eta) noise.
struct Ftpl {
    static constexpr std::string_view kName = "ftpl";
    static constexpr bool kContextual = false;

    std::vector<double> cumulative;
    double eta;

    Ftpl(std::size_t arms, double eta_) : cumulative(arms, 0.0), eta(eta_) {}

    std::size_t arms() const noexcept { return cumulative.size(); }

    SelectionTrace select(const Vector&, std::uint64_t, Rng& rng) const {
        SelectionTrace tr;
        tr.rng_draws.resize(arms());
        for (double& u : tr.rng_draws) u = rng.uniform_open();
        tr.scores = gumbel_perturb(cumulative, tr.rng_draws, eta);
        tr.chosen = argmax_lowest(tr.scores);
        return tr;
    }

    void observe(const Vector&, const SelectionTrace& trace, double reward) {
        detail::check_chosen(trace, arms());
        detail::check_reward(reward);
        cumulative[trace.chosen] += reward;
    }
};

/// Gaussian Thompson sampling on per-arm means: the d = 1, x = 1 case of the
/// contextual posterior update.
struct TsNonContextual {
    static constexpr std::string_view kName = "ts_nc";
    static constexpr bool kContextual = false;

    std::vector<double> mean;
    std::vector<double> precision;
    std::vector<std::uint64_t> pulls;
    double sigma_noise;

    TsNonContextual(std::size_t arms, double sigma_noise_, double prior_variance = 1.0)
        : mean(arms, 0.0), precision(arms, 1.0 / prior_variance), pulls(arms, 0), sigma_noise(sigma_noise_) {}

    std::size_t arms() const noexcept { return mean.size(); }

    SelectionTrace select(const Vector&, std::uint64_t, Rng& rng) const {
        SelectionTrace tr;
        tr.scores.resize(arms());
        tr.rng_draws.resize(arms());
        for (std::size_t k = 0; k < arms(); ++k) {
            const double z = rng.normal();
            tr.rng_draws[k] = z;
            tr.scores[k] = mean[k] + z / std::sqrt(precision[k]);
        }
        tr.chosen = argmax_lowest(tr.scores);
        return tr;
    }

    void observe(const Vector&, const SelectionTrace& trace, double reward) {
        detail::check_chosen(trace, arms());
        detail::check_reward(reward);
        const std::size_t a = trace.chosen;
        const double inv_noise = 1.0 / (sigma_noise * sigma_noise);
        const double prev_precision = precision[a];
        precision[a] += inv_noise;
        mean[a] = (prev_precision * mean[a] + reward * inv_noise) / precision[a];
        ++pulls[a];
    }
};

// ---------------------------------------------------------------------------
// Contextual linear

struct LinUcb {
    static constexpr std::string_view kName = "linucb";
    static constexpr bool kContextual = true;

    std::vector<RidgeStats> stats;
    std::vector<std::uint64_t> pulls;
    double alpha;

    LinUcb(std::size_t arms, Eigen::Index d, double alpha_, double lambda)
        : stats(arms, RidgeStats(d, lambda)), pulls(arms, 0), alpha(alpha_) {}

    std::size_t arms() const noexcept { return stats.size(); }
    Eigen::Index dim() const noexcept { return stats.front().moment.size(); }

    SelectionTrace select(const Vector& x, std::uint64_t, Rng&) const {
        detail::check_dim(x, dim());
        SelectionTrace tr;
        tr.scores.resize(arms());
        for (std::size_t k = 0; k < arms(); ++k)
            tr.scores[k] = linucb_score(stats[k].gram.inverse(), stats[k].moment, x, alpha);
        tr.chosen = argmax_lowest(tr.scores);
        return tr;
    }

    void observe(const Vector& x, const SelectionTrace& trace, double reward) {
        detail::check_dim(x, dim());
        detail::check_chosen(trace, arms());
        detail::check_reward(reward);
        stats[trace.chosen].add(x, reward);
        ++pulls[trace.chosen];
    }

    Vector theta(std::size_t arm) const { return stats[arm].estimate(); }
};

/// LinUCB with the KL-style bonus sqrt(2 var max((ln t + c ln ln(t+1)) / max(1, n_a), 0)).
struct LinUcbKl {
    static constexpr std::string_view kName = "linucb_kl";
    static constexpr bool kContextual = true;

    std::vector<RidgeStats> stats;
    std::vector<std::uint64_t> pulls;
    double c;

    LinUcbKl(std::size_t arms, Eigen::Index d, double c_, double lambda)
        : stats(arms, RidgeStats(d, lambda)), pulls(arms, 0), c(c_) {}

    std::size_t arms() const noexcept { return stats.size(); }
    Eigen::Index dim() const noexcept { return stats.front().moment.size(); }

    SelectionTrace select(const Vector& x, std::uint64_t t, Rng&) const {
        detail::check_dim(x, dim());
        SelectionTrace tr;
        tr.scores.resize(arms());
        for (std::size_t k = 0; k < arms(); ++k) {
            const Vector ax = stats[k].gram.inverse() * x;
            const double mu = ax.dot(stats[k].moment);
            tr.scores[k] = mu + kl_bonus(x.dot(ax), t, pulls[k], c);
        }
        tr.chosen = argmax_lowest(tr.scores);
        return tr;
    }

    void observe(const Vector& x, const SelectionTrace& trace, double reward) {
        detail::check_dim(x, dim());
        detail::check_chosen(trace, arms());
        detail::check_reward(reward);
        stats[trace.chosen].add(x, reward);
        ++pulls[trace.chosen];
    }

    Vector theta(std::size_t arm) const { return stats[arm].estimate(); }
};

/// Per-arm FTRL-proximal regression, greedy on x' w_a.
struct Ftrl {
    static constexpr std::string_view kName = "ftrl";
    static constexpr bool kContextual = true;

    std::vector<Vector> z;
    std::vector<Vector> n;
    FtrlParams params;

    Ftrl(std::size_t arms, Eigen::Index d, FtrlParams p)
        : z(arms, Vector::Zero(d)), n(arms, Vector::Zero(d)), params(p) {}

    std::size_t arms() const noexcept { return z.size(); }
    Eigen::Index dim() const noexcept { return z.front().size(); }

    SelectionTrace select(const Vector& x, std::uint64_t, Rng&) const {
        detail::check_dim(x, dim());
        SelectionTrace tr;
        tr.scores.resize(arms());
        for (std::size_t k = 0; k < arms(); ++k) tr.scores[k] = theta(k).dot(x);
        tr.chosen = argmax_lowest(tr.scores);
        return tr;
    }

    void observe(const Vector& x, const SelectionTrace& trace, double reward) {
        detail::check_dim(x, dim());
        detail::check_chosen(trace, arms());
        detail::check_reward(reward);
        const std::size_t a = trace.chosen;
        const Vector w = theta(a);
        ftrl_update(z[a], n[a], w, x, reward, params.alpha);
    }

    Vector theta(std::size_t arm) const { return ftrl_weights(z[arm], n[arm], params); }
};

/// Epsilon-greedy over per-arm ridge (l2-regularized FTRL) estimates.
struct EpsGreedyFtrl {
    static constexpr std::string_view kName = "eps_ftrl";
    static constexpr bool kContextual = true;

    std::vector<RidgeStats> stats;
    double epsilon;

    EpsGreedyFtrl(std::size_t arms, Eigen::Index d, double epsilon_, double lambda)
        : stats(arms, RidgeStats(d, lambda)), epsilon(epsilon_) {}

    std::size_t arms() const noexcept { return stats.size(); }
    Eigen::Index dim() const noexcept { return stats.front().moment.size(); }

    SelectionTrace select(const Vector& x, std::uint64_t, Rng& rng) const {
        detail::check_dim(x, dim());
        SelectionTrace tr;
        tr.scores.resize(arms());
        for (std::size_t k = 0; k < arms(); ++k) tr.scores[k] = theta(k).dot(x);
        const double u = rng.uniform();
        tr.rng_draws.push_back(u);
        if (u < epsilon) {
            const double v = rng.uniform();
            tr.rng_draws.push_back(v);
            tr.chosen = std::min(static_cast<std::size_t>(v * static_cast<double>(arms())), arms() - 1);
        } else {
            tr.chosen = argmax_lowest(tr.scores);
        }
        return tr;
    }

    void observe(const Vector& x, const SelectionTrace& trace, double reward) {
        detail::check_dim(x, dim());
        detail::check_chosen(trace, arms());
        detail::check_reward(reward);
        stats[trace.chosen].add(x, reward);
    }

    Vector theta(std::size_t arm) const { return stats[arm].estimate(); }
};

struct LinExp3 {
    static constexpr std::string_view kName = "linexp3";
    static constexpr bool kContextual = true;

    std::vector<Vector> thetas;
    double gamma;
    double eta;

    LinExp3(std::size_t arms, Eigen::Index d, double gamma_, double eta_)
        : thetas(arms, Vector::Zero(d)), gamma(gamma_), eta(eta_) {}

    std::size_t arms() const noexcept { return thetas.size(); }
    Eigen::Index dim() const noexcept { return thetas.front().size(); }

    SelectionTrace select(const Vector& x, std::uint64_t, Rng& rng) const {
        detail::check_dim(x, dim());
        SelectionTrace tr;
        std::vector<double> logits(arms());
        for (std::size_t k = 0; k < arms(); ++k) logits[k] = thetas[k].dot(x);
        auto p = linexp3_probs(logits, gamma);
        const double u = rng.uniform();
        tr.rng_draws = {u};
        tr.chosen = sample_categorical(p, u);
        tr.scores = std::move(logits);
        tr.probs = std::move(p);
        return tr;
    }

    void observe(const Vector& x, const SelectionTrace& trace, double reward) {
        detail::check_dim(x, dim());
        detail::check_chosen(trace, arms());
        detail::check_reward(reward);
        require(trace.probs.has_value(), "linexp3 observe needs the selection probabilities");
        linexp3_update(thetas[trace.chosen], x, reward, (*trace.probs)[trace.chosen], eta);
    }

    Vector theta(std::size_t arm) const { return thetas[arm]; }
};

struct LinFtpl {
    static constexpr std::string_view kName = "linftpl";
    static constexpr bool kContextual = true;

    std::vector<Vector> thetas;
    double eta;

    LinFtpl(std::size_t arms, Eigen::Index d, double eta_) : thetas(arms, Vector::Zero(d)), eta(eta_) {}

    std::size_t arms() const noexcept { return thetas.size(); }
    Eigen::Index dim() const noexcept { return thetas.front().size(); }

    SelectionTrace select(const Vector& x, std::uint64_t, Rng& rng) const {
        detail::check_dim(x, dim());
        SelectionTrace tr;
        std::vector<double> linear(arms());
        for (std::size_t k = 0; k < arms(); ++k) linear[k] = thetas[k].dot(x);
        tr.rng_draws.resize(arms());
        for (double& u : tr.rng_draws) u = rng.uniform_open();
        tr.scores = gumbel_perturb(linear, tr.rng_draws, eta);
        tr.chosen = argmax_lowest(tr.scores);
        return tr;
    }

    // No learning rate on the update.
    void observe(const Vector& x, const SelectionTrace& trace, double reward) {
        detail::check_dim(x, dim());
        detail::check_chosen(trace, arms());
        detail::check_reward(reward);
        thetas[trace.chosen] += reward * x;
    }

    Vector theta(std::size_t arm) const { return thetas[arm]; }
};

/// Bayesian linear regression per arm; selects argmax x' theta~ with
/// theta~ ~ N(mu_a, Sigma_a). `posterior[a].matrix()` is the precision,
/// `posterior[a].inverse()` the covariance.
struct TsContextual {
    static constexpr std::string_view kName = "ts_c";
    static constexpr bool kContextual = true;

    std::vector<Vector> mu;
    std::vector<SpdWithInverse> posterior;
    double sigma_noise;

    TsContextual(std::size_t arms, Eigen::Index d, double sigma_noise_, double prior_variance = 1.0)
        : mu(arms, Vector::Zero(d)), posterior(arms, SpdWithInverse(d, 1.0 / prior_variance)),
          sigma_noise(sigma_noise_) {}

    std::size_t arms() const noexcept { return mu.size(); }
    Eigen::Index dim() const noexcept { return mu.front().size(); }

    SelectionTrace select(const Vector& x, std::uint64_t, Rng& rng) const {
        detail::check_dim(x, dim());
        SelectionTrace tr;
        tr.scores.resize(arms());
        tr.rng_draws.reserve(arms() * static_cast<std::size_t>(dim()));
        for (std::size_t k = 0; k < arms(); ++k) {
            Eigen::LLT<Matrix> llt(posterior[k].inverse());
            if (llt.info() != Eigen::Success) throw NumericError("posterior covariance is not positive definite");
            Vector z(dim());
            for (Eigen::Index i = 0; i < dim(); ++i) {
                z[i] = rng.normal();
                tr.rng_draws.push_back(z[i]);
            }
            const Vector sample = mu[k] + llt.matrixL() * z;
            tr.scores[k] = x.dot(sample);
        }
        tr.chosen = argmax_lowest(tr.scores);
        return tr;
    }

    void observe(const Vector& x, const SelectionTrace& trace, double reward) {
        detail::check_dim(x, dim());
        detail::check_chosen(trace, arms());
        detail::check_reward(reward);
        const std::size_t a = trace.chosen;
        const double inv_noise = 1.0 / (sigma_noise * sigma_noise);
        const Vector natural = posterior[a].matrix() * mu[a] + x * (reward * inv_noise);
        posterior[a].add_outer(x, inv_noise);
        mu[a] = posterior[a].inverse() * natural;
    }

    Vector theta(std::size_t arm) const { return mu[arm]; }
};

/// Always plays one arm and never learns; the static-prompt baseline.
struct StaticArm {
    static constexpr std::string_view kName = "static";
    static constexpr bool kContextual = false;

    std::size_t K;
    std::size_t arm;

    StaticArm(std::size_t arms_, std::size_t arm_) : K(arms_), arm(arm_) {
        require(arm < K, "static arm out of range");
    }

    std::size_t arms() const noexcept { return K; }

    SelectionTrace select(const Vector&, std::uint64_t, Rng&) const {
        SelectionTrace tr;
        tr.chosen = arm;
        tr.scores.assign(K, 0.0);
        tr.scores[arm] = 1.0;
        return tr;
    }

    void observe(const Vector&, const SelectionTrace& trace, double reward) {
        detail::check_chosen(trace, K);
        detail::check_reward(reward);
    }
};

} // namespace rlab::bandit
