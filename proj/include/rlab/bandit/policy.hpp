#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rlab/bandit/policies.hpp"
#include "rlab/error.hpp"
#include "rlab/random.hpp"

namespace rlab::bandit {

/// Policy name plus numeric hyperparameters. Unspecified parameters take
/// the defaults listed in `default_params`.
struct PolicySpec {
    std::string name;
    std::map<std::string, double> params;
};

inline const std::vector<std::string_view>& policy_names() {
    static const std::vector<std::string_view> names{"exp3", "ftpl", "ts_nc", "linucb", "linucb_kl",
                                                     "ftrl", "eps_ftrl", "linexp3", "linftpl", "ts_c"};
    return names;
}

inline std::map<std::string, double> default_params(std::string_view name) {
    if (name == "exp3") return {{"gamma", 0.1}};
    if (name == "ftpl") return {{"eta", 1.0}};
    if (name == "ts_nc") return {{"sigma_noise", 0.5}, {"prior_variance", 1.0}};
    if (name == "linucb") return {{"alpha", 1.0}, {"lambda", 1.0}};
    if (name == "linucb_kl") return {{"c", 3.0}, {"lambda", 1.0}};
    if (name == "ftrl") return {{"alpha", 0.1}, {"beta", 1.0}, {"l1", 0.01}, {"l2", 0.1}};
    if (name == "eps_ftrl") return {{"epsilon", 0.1}, {"lambda", 1.0}};
    if (name == "linexp3") return {{"gamma", 0.1}, {"eta", 0.05}};
    if (name == "linftpl") return {{"eta", 1.0}};
    if (name == "ts_c") return {{"sigma_noise", 0.5}, {"prior_variance", 1.0}};
    throw ConfigError("policy.name", "unknown policy '" + std::string(name) + "'");
}

inline bool is_contextual(std::string_view name) {
    return name == "linucb" || name == "linucb_kl" || name == "ftrl" || name == "eps_ftrl" || name == "linexp3" ||
           name == "linftpl" || name == "ts_c";
}

using PolicyVariant = std::variant<Exp3, Ftpl, TsNonContextual, LinUcb, LinUcbKl, Ftrl, EpsGreedyFtrl, LinExp3,
                                   LinFtpl, TsContextual, StaticArm>;

/// A policy instance with its own seeded random stream. Single writer:
/// `step` and `observe` must be serialized by the caller.
class Policy {
public:
    Policy(PolicyVariant impl, std::size_t dim, std::uint64_t seed)
        : impl_(std::move(impl)), dim_(dim), rng_(seed) {}

    /// Selects an arm for round t (t >= 1).
    SelectionTrace step(const Vector& x, std::uint64_t t) {
        require(t >= 1, "round index must be at least 1");
        require(t >= last_t_, "round index must be nondecreasing");
        last_t_ = t;
        return std::visit([&](const auto& p) { return p.select(x, t, rng_); }, impl_);
    }

    void observe(const Vector& x, const SelectionTrace& trace, double reward) {
        std::visit([&](auto& p) { p.observe(x, trace, reward); }, impl_);
    }

    std::string_view name() const {
        return std::visit([](const auto& p) { return std::remove_cvref_t<decltype(p)>::kName; }, impl_);
    }

    bool contextual() const {
        return std::visit([](const auto& p) { return std::remove_cvref_t<decltype(p)>::kContextual; }, impl_);
    }

    std::size_t arms() const {
        return std::visit([](const auto& p) { return p.arms(); }, impl_);
    }

    std::size_t dim() const noexcept { return dim_; }
    std::uint64_t last_round() const noexcept { return last_t_; }

    const PolicyVariant& impl() const noexcept { return impl_; }
    PolicyVariant& impl() noexcept { return impl_; }

    /// Per-arm linear weights (rows = arms) for contextual-linear policies.
    Matrix theta() const {
        return std::visit(
            [&](const auto& p) -> Matrix {
                using P = std::remove_cvref_t<decltype(p)>;
                if constexpr (P::kContextual) {
                    Matrix out(static_cast<Eigen::Index>(p.arms()), static_cast<Eigen::Index>(dim_));
                    for (std::size_t k = 0; k < p.arms(); ++k)
                        out.row(static_cast<Eigen::Index>(k)) = p.theta(k).transpose();
                    return out;
                } else {
                    throw ContractError("policy '" + std::string(P::kName) + "' has no per-arm linear weights");
                }
            },
            impl_);
    }

private:
    PolicyVariant impl_;
    std::size_t dim_;
    Rng rng_;
    std::uint64_t last_t_ = 1;
};

namespace detail {

class ParamReader {
public:
    ParamReader(std::string_view policy, const std::map<std::string, double>& given)
        : policy_(policy), values_(default_params(policy)) {
        for (const auto& [key, value] : given) {
            if (!values_.contains(key))
                throw ConfigError(field(key), "unknown hyperparameter for policy '" + policy_ + "'");
            values_[key] = value;
        }
    }

    double get(const std::string& key) const { return values_.at(key); }

    double positive(const std::string& key) const {
        const double v = get(key);
        if (!(v > 0.0)) throw ConfigError(field(key), "must be > 0");
        return v;
    }

    double nonnegative(const std::string& key) const {
        const double v = get(key);
        if (!(v >= 0.0)) throw ConfigError(field(key), "must be >= 0");
        return v;
    }

    double in_range(const std::string& key, double lo, double hi, bool lo_open) const {
        const double v = get(key);
        const bool ok = (lo_open ? v > lo : v >= lo) && v <= hi;
        if (!ok)
            throw ConfigError(field(key), "must lie in " + std::string(lo_open ? "(" : "[") + std::to_string(lo) +
                                              ", " + std::to_string(hi) + "]");
        return v;
    }

private:
    std::string field(const std::string& key) const { return "policy.params." + key; }

    std::string policy_;
    std::map<std::string, double> values_;
};

} // namespace detail

/// Builds a fresh policy. `dim` is ignored by non-contextual policies.
inline Policy init_policy(const PolicySpec& spec, std::size_t arms, std::size_t dim, std::uint64_t seed) {
    if (arms < 2) throw ConfigError("arms", "at least two arms are required");
    if (dim < 1) throw ConfigError("dim", "dimension must be at least 1");
    const detail::ParamReader p(spec.name, spec.params);
    const auto d = static_cast<Eigen::Index>(dim);
    const std::string& n = spec.name;

    auto make = [&]() -> PolicyVariant {
        if (n == "exp3") return Exp3(arms, p.in_range("gamma", 0.0, 1.0, true));
        if (n == "ftpl") return Ftpl(arms, p.positive("eta"));
        if (n == "ts_nc") return TsNonContextual(arms, p.positive("sigma_noise"), p.positive("prior_variance"));
        if (n == "linucb") return LinUcb(arms, d, p.nonnegative("alpha"), p.positive("lambda"));
        if (n == "linucb_kl") return LinUcbKl(arms, d, p.positive("c"), p.positive("lambda"));
        if (n == "ftrl")
            return Ftrl(arms, d,
                        FtrlParams{p.positive("alpha"), p.nonnegative("beta"), p.nonnegative("l1"),
                                   p.nonnegative("l2")});
        if (n == "eps_ftrl") return EpsGreedyFtrl(arms, d, p.in_range("epsilon", 0.0, 1.0, false), p.positive("lambda"));
        if (n == "linexp3") return LinExp3(arms, d, p.in_range("gamma", 0.0, 1.0, false), p.positive("eta"));
        if (n == "linftpl") return LinFtpl(arms, d, p.positive("eta"));
        if (n == "ts_c") return TsContextual(arms, d, p.positive("sigma_noise"), p.positive("prior_variance"));
        throw ConfigError("policy.name", "unknown policy '" + n + "'");
    };
    return Policy(make(), dim, seed);
}

inline Policy static_policy(std::size_t arms, std::size_t arm, std::size_t dim) {
    return Policy(StaticArm(arms, arm), dim, 0);
}

} // namespace rlab::bandit
