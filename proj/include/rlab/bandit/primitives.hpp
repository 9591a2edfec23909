#pragma once

// Stateless selection and update rules shared by the bandit policies.
// Each function implements one rule exactly so it can be checked in
// isolation against hand-derived values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rlab/error.hpp"
#include "rlab/random.hpp"

namespace rlab::bandit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Index of the largest score; exact ties go to the lowest index.
inline std::size_t argmax_lowest(std::span<const double> scores) {
    require(!scores.empty(), "argmax over empty score list");
    std::size_t best = 0;
    for (std::size_t k = 1; k < scores.size(); ++k)
        if (scores[k] > scores[best]) best = k;
    return best;
}

/// Draws an index from a probability vector with a single uniform.
inline std::size_t sample_categorical(std::span<const double> probs, double u) {
    double cumulative = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        if (probs[k] <= 0.0) continue;
        last_positive = k;
        cumulative += probs[k];
        if (u < cumulative) return k;
    }
    return last_positive;
}

// ---- EXP3 -----------------------------------------------------------------

inline constexpr double kExp3RenormalizeAbove = 1e100;

/// p_k = (1 - gamma) w_k / sum(w) + gamma / K.
inline std::vector<double> exp3_probs(std::span<const double> weights, double gamma) {
    require(!weights.empty(), "exp3_probs: no arms");
    require(gamma >= 0.0 && gamma <= 1.0, "exp3_probs: gamma must lie in [0, 1]");
    double total = 0.0;
    for (double w : weights) {
        require(w > 0.0 && std::isfinite(w), "exp3_probs: weights must be finite and positive");
        total += w;
    }
    const auto K = static_cast<double>(weights.size());
    std::vector<double> p(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k) p[k] = (1.0 - gamma) * weights[k] / total + gamma / K;
    return p;
}

/// w_chosen *= exp(gamma r / (K p_chosen)); all weights are rescaled by their
/// max once it exceeds 1e100 (probabilities are scale invariant).
inline void exp3_update(std::vector<double>& weights, std::size_t chosen, double p_chosen, double reward,
                        double gamma) {
    require(chosen < weights.size(), "exp3_update: arm out of range");
    require(p_chosen > 0.0, "exp3_update: chosen-arm probability must be positive");
    require(reward >= 0.0 && reward <= 1.0, "exp3_update: reward must lie in [0, 1]");
    const auto K = static_cast<double>(weights.size());
    const double increment = gamma * reward / (K * p_chosen);
    const double updated = weights[chosen] * std::exp(increment);
    if (std::isfinite(updated) && updated <= kExp3RenormalizeAbove) {
        weights[chosen] = updated;
        return;
    }
    // Rescale in log space so the multiplier itself cannot overflow.
    std::vector<double> logs(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k) logs[k] = std::log(weights[k]);
    logs[chosen] += increment;
    const double top = *std::max_element(logs.begin(), logs.end());
    for (std::size_t k = 0; k < weights.size(); ++k) weights[k] = std::exp(logs[k] - top);
}

// ---- FTPL -----------------------------------------------------------------

/// Perturbed scores cum_k + Gumbel(0, 1/eta) built from the given uniforms.
inline std::vector<double> gumbel_perturb(std::span<const double> base, std::span<const double> uniforms,
                                          double eta) {
    require(eta > 0.0, "gumbel_perturb: eta must be positive");
    require(base.size() == uniforms.size(), "gumbel_perturb: size mismatch");
    std::vector<double> out(base.size());
    for (std::size_t k = 0; k < base.size(); ++k) out[k] = base[k] + gumbel_from_uniform(uniforms[k], 1.0 / eta);
    return out;
}

// ---- Linear UCB family ------------------------------------------------------

/// x' A^{-1} b + alpha sqrt(x' A^{-1} x), given A^{-1} directly.
inline double linucb_score(const Matrix& a_inv, const Vector& b, const Vector& x, double alpha) {
    const Vector ax = a_inv * x;
    const double mean = ax.dot(b);
    const double var = std::max(0.0, x.dot(ax));
    return mean + alpha * std::sqrt(var);
}

/// max((ln t + c ln ln(t+1)) / max(1, n), 0).
inline double kl_bound(std::uint64_t t, std::uint64_t pulls, double c) {
    require(t >= 1, "kl_bound: t must be at least 1");
    const double td = static_cast<double>(t);
    const double raw = (std::log(td) + c * std::log(std::log(td + 1.0))) /
                       std::max(1.0, static_cast<double>(pulls));
    return std::max(raw, 0.0);
}

inline double kl_bonus(double variance, std::uint64_t t, std::uint64_t pulls, double c) {
    return std::sqrt(2.0 * std::max(0.0, variance) * kl_bound(t, pulls, c));
}

// ---- FTRL-proximal ----------------------------------------------------------

struct FtrlParams {
    double alpha = 0.1;
    double beta = 1.0;
    double l1 = 0.01;
    double l2 = 0.1;
};

/// Closed-form per-coordinate weights; |z_i| <= l1 gives exactly 0.
inline Vector ftrl_weights(const Vector& z, const Vector& n, const FtrlParams& p) {
    require(z.size() == n.size(), "ftrl_weights: size mismatch");
    Vector w = Vector::Zero(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        if (std::abs(z[i]) <= p.l1) continue;
        const double sign = z[i] > 0.0 ? 1.0 : -1.0;
        w[i] = -(z[i] - sign * p.l1) / ((p.beta + std::sqrt(n[i])) / p.alpha + p.l2);
    }
    return w;
}

/// error = <w,x> - r; g = error x; sigma_i = (sqrt(n_i + g_i^2) - sqrt(n_i)) / alpha;
/// z_i += g_i - sigma_i w_i; n_i += g_i^2.
inline void ftrl_update(Vector& z, Vector& n, const Vector& w, const Vector& x, double reward, double alpha) {
    require(z.size() == x.size() && n.size() == x.size() && w.size() == x.size(), "ftrl_update: size mismatch");
    const double error = w.dot(x) - reward;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double g = error * x[i];
        const double sigma = (std::sqrt(n[i] + g * g) - std::sqrt(n[i])) / alpha;
        z[i] += g - sigma * w[i];
        n[i] += g * g;
    }
}

// ---- Linear EXP3 ------------------------------------------------------------

/// Softmax of logits (after max subtraction) mixed with gamma/K uniform mass.
inline std::vector<double> linexp3_probs(std::span<const double> logits, double gamma) {
    require(!logits.empty(), "linexp3_probs: no arms");
    require(gamma >= 0.0 && gamma <= 1.0, "linexp3_probs: gamma must lie in [0, 1]");
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        p[k] = std::exp(logits[k] - top);
        total += p[k];
    }
    const auto K = static_cast<double>(logits.size());
    for (double& v : p) v = (1.0 - gamma) * v / total + gamma / K;
    return p;
}

/// theta += eta * (r / p) * x.
inline void linexp3_update(Vector& theta, const Vector& x, double reward, double p_chosen, double eta) {
    require(p_chosen > 0.0, "linexp3_update: chosen-arm probability must be positive");
    require(theta.size() == x.size(), "linexp3_update: size mismatch");
    theta += eta * (reward / p_chosen) * x;
}

} // namespace rlab::bandit
