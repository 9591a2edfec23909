#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "rlab/bandit/policy.hpp"

namespace rlab::bandit {
namespace {

constexpr double kTol = 1e-9;

Vector unit(Eigen::Index d, Eigen::Index i) {
    Vector e = Vector::Zero(d);
    e[i] = 1.0;
    return e;
}

Vector random_binary_context(Rng& rng, Eigen::Index d, double p = 0.5) {
    Vector x(d);
    for (Eigen::Index i = 0; i < d - 1; ++i) x[i] = rng.bernoulli(p) ? 1.0 : 0.0;
    x[d - 1] = 1.0;
    return x;
}

// Pearson chi-square statistic against a uniform expectation.
double chi_square_uniform(const std::vector<int>& counts) {
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    const double expected = total / static_cast<double>(counts.size());
    double stat = 0.0;
    for (int c : counts) stat += (c - expected) * (c - expected) / expected;
    return stat;
}

// ---- init_policy ------------------------------------------------------------

TEST(InitPolicy, LinUcbStartsFromScaledIdentity) {
    Policy p = init_policy({"linucb", {{"lambda", 1.0}}}, 5, 18, 1);
    const auto& lin = std::get<LinUcb>(p.impl());
    ASSERT_EQ(lin.stats.size(), 5u);
    for (const auto& s : lin.stats) {
        EXPECT_TRUE(s.gram.matrix().isApprox(Matrix::Identity(18, 18)));
        EXPECT_TRUE(s.moment.isZero());
    }
}

TEST(InitPolicy, Exp3StartsUniform) {
    Policy p = init_policy({"exp3", {}}, 5, 18, 1);
    EXPECT_EQ(std::get<Exp3>(p.impl()).weights, std::vector<double>(5, 1.0));
}

TEST(InitPolicy, ContextualTsPrior) {
    Policy p = init_policy({"ts_c", {}}, 2, 3, 1);
    const auto& ts = std::get<TsContextual>(p.impl());
    for (std::size_t a = 0; a < 2; ++a) {
        EXPECT_TRUE(ts.mu[a].isZero());
        EXPECT_TRUE(ts.posterior[a].inverse().isApprox(Matrix::Identity(3, 3)));
    }
}

TEST(InitPolicy, RejectsOutOfRangeHyperparameters) {
    auto field_of = [](const PolicySpec& spec) {
        try {
            init_policy(spec, 5, 18, 0);
        } catch (const ConfigError& e) {
            return e.field();
        }
        return std::string("<none>");
    };
    EXPECT_EQ(field_of({"exp3", {{"gamma", 0.0}}}), "policy.params.gamma");
    EXPECT_EQ(field_of({"exp3", {{"gamma", 1.5}}}), "policy.params.gamma");
    EXPECT_EQ(field_of({"ftpl", {{"eta", -1.0}}}), "policy.params.eta");
    EXPECT_EQ(field_of({"linucb", {{"lambda", 0.0}}}), "policy.params.lambda");
    EXPECT_EQ(field_of({"eps_ftrl", {{"epsilon", 1.1}}}), "policy.params.epsilon");
    EXPECT_EQ(field_of({"linucb", {{"bogus", 1.0}}}), "policy.params.bogus");
    EXPECT_EQ(field_of({"nope", {}}), "policy.name");
    EXPECT_THROW(init_policy({"exp3", {}}, 1, 18, 0), ConfigError);
}

// ---- policy_step ------------------------------------------------------------

TEST(PolicyStep, FreshLinUcbTiesBreakToArmZero) {
    Policy p = init_policy({"linucb", {}}, 5, 18, 3);
    Rng rng(9);
    const auto tr = p.step(random_binary_context(rng, 18), 1);
    EXPECT_EQ(tr.chosen, 0u);
    for (double s : tr.scores) EXPECT_DOUBLE_EQ(s, tr.scores[0]);
}

TEST(PolicyStep, FreshExp3IsUniform) {
    Policy p = init_policy({"exp3", {{"gamma", 0.1}}}, 5, 18, 3);
    const auto tr = p.step(Vector::Ones(18), 1);
    ASSERT_TRUE(tr.probs);
    for (double q : *tr.probs) EXPECT_NEAR(q, 0.2, kTol);
}

TEST(PolicyStep, SeededLinFtplIsReproducible) {
    Policy a = init_policy({"linftpl", {}}, 5, 18, 77);
    Policy b = init_policy({"linftpl", {}}, 5, 18, 77);
    const Vector x = Vector::Ones(18);
    const auto ta = a.step(x, 1);
    const auto tb = b.step(x, 1);
    EXPECT_EQ(ta.chosen, tb.chosen);
    EXPECT_EQ(ta.scores, tb.scores);
    EXPECT_EQ(ta.rng_draws, tb.rng_draws);
}

TEST(PolicyStep, DimensionMismatchIsContractError) {
    Policy p = init_policy({"ts_c", {}}, 5, 18, 3);
    EXPECT_THROW(p.step(Vector::Ones(17), 1), ContractError);
    EXPECT_THROW(p.step(Vector::Ones(18), 0), ContractError);
}

// ---- EXP3 -------------------------------------------------------------------

TEST(Exp3, Probabilities) {
    for (double q : exp3_probs(std::vector<double>(5, 1.0), 0.1)) EXPECT_NEAR(q, 0.2, kTol);
    const auto p = exp3_probs(std::vector<double>{2, 1, 1, 1, 1}, 0.0);
    EXPECT_NEAR(p[0], 1.0 / 3.0, kTol);
    for (int k = 1; k < 5; ++k) EXPECT_NEAR(p[k], 1.0 / 6.0, kTol);
    for (double q : exp3_probs(std::vector<double>{7, 0.1, 3, 1e5, 2}, 1.0)) EXPECT_NEAR(q, 0.2, kTol);
    EXPECT_THROW(exp3_probs(std::vector<double>{1, 0}, 0.1), ContractError);
}

TEST(Exp3, Update) {
    std::vector<double> w(5, 1.0);
    exp3_update(w, 2, 0.2, 0.0, 0.1);
    EXPECT_EQ(w, std::vector<double>(5, 1.0));
    exp3_update(w, 2, 0.5, 1.0, 0.1);
    EXPECT_NEAR(w[2], 1.0408107741923882, kTol);  // exp(0.04)
    EXPECT_EQ(w[0], 1.0);
    EXPECT_THROW(exp3_update(w, 2, 0.0, 1.0, 0.1), ContractError);
}

TEST(Exp3, ZeroRewardsKeepUniform) {
    Policy p = init_policy({"exp3", {{"gamma", 0.1}}}, 5, 1, 5);
    const Vector x = Vector::Ones(1);
    for (int t = 1; t <= 2; ++t) p.observe(x, p.step(x, t), 0.0);
    const auto tr = p.step(x, 3);
    for (double q : *tr.probs) EXPECT_NEAR(q, 0.2, kTol);
}

TEST(Exp3, RenormalizesBeforeOverflow) {
    std::vector<double> w{1e99, 1.0};
    exp3_update(w, 0, 1e-3, 1.0, 1.0);  // multiplier exp(500)
    EXPECT_TRUE(std::isfinite(w[0]));
    EXPECT_DOUBLE_EQ(w[0], 1.0);
    EXPECT_GT(w[1], 0.0);
}

// ---- FTPL -------------------------------------------------------------------

TEST(Ftpl, VanishingNoisePicksLeader) {
    Ftpl f(3, 1e6);
    f.cumulative = {10, 0, 0};
    Rng rng(1);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(f.select(Vector(), 1, rng).chosen, 0u);
}

TEST(Ftpl, EqualCumulativeRewardsAreUniform) {
    Ftpl f(5, 1.0);
    Rng rng(2024);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 10000; ++i) ++counts[f.select(Vector(), 1, rng).chosen];
    EXPECT_LT(chi_square_uniform(counts), 18.47);  // df = 4, p = 0.001
}

TEST(Ftpl, SeededChoiceReplaysFromRecordedUniforms) {
    Policy p = init_policy({"ftpl", {{"eta", 1.0}}}, 2, 1, 42);
    const auto tr = p.step(Vector::Ones(1), 1);
    ASSERT_EQ(tr.rng_draws.size(), 2u);
    // Independent replay of the seeded stream.
    std::mt19937_64 engine(42);
    for (int k = 0; k < 2; ++k) {
        const double u = (static_cast<double>(engine() >> 11) + 0.5) / 9007199254740992.0;
        EXPECT_EQ(tr.rng_draws[k], u);
    }
    const double g0 = -std::log(-std::log(tr.rng_draws[0]));
    const double g1 = -std::log(-std::log(tr.rng_draws[1]));
    EXPECT_EQ(tr.chosen, g1 > g0 ? 1u : 0u);
}

// ---- LinUCB ------------------------------------------------------------------

TEST(LinUcb, IdentityGramZeroEstimate) {
    Vector x = Vector::Zero(18);
    x[0] = x[4] = x[17] = 1.0;
    LinUcb lin(5, 18, 1.0, 1.0);
    Rng rng(0);
    for (double s : lin.select(x, 1, rng).scores) EXPECT_NEAR(s, std::sqrt(3.0), kTol);
}

TEST(LinUcb, OneUpdateHandInverse) {
    const double alpha = 0.7;
    LinUcb lin(2, 4, alpha, 1.0);
    SelectionTrace tr;
    tr.chosen = 0;
    lin.observe(unit(4, 0), tr, 1.0);
    const Vector theta = lin.theta(0);
    EXPECT_NEAR(theta[0], 0.5, kTol);
    EXPECT_NEAR(theta.tail(3).norm(), 0.0, kTol);
    Rng rng(0);
    EXPECT_NEAR(lin.select(unit(4, 0), 2, rng).scores[0], 0.5 + alpha * std::sqrt(0.5), kTol);
}

TEST(LinUcb, ZeroAlphaIsGreedy) {
    LinUcb lin(3, 2, 0.0, 1.0);
    SelectionTrace tr;
    tr.chosen = 2;
    lin.observe(Vector::Ones(2), tr, 0.9);
    Rng rng(0);
    const auto sel = lin.select(Vector::Ones(2), 2, rng);
    EXPECT_EQ(sel.chosen, 2u);
    EXPECT_NEAR(sel.scores[2], Vector::Ones(2).dot(lin.theta(2)), kTol);
    EXPECT_EQ(sel.scores[0], 0.0);
}

TEST(GramUpdate, HandArithmetic) {
    RidgeStats s(2, 1.0);
    s.add(Vector::Zero(2), 0.7);
    EXPECT_TRUE(s.gram.matrix().isApprox(Matrix::Identity(2, 2)));
    EXPECT_TRUE(s.moment.isZero());
    s.add(Vector::Ones(2), 0.5);
    Matrix expected(2, 2);
    expected << 2, 1, 1, 2;
    EXPECT_NEAR((s.gram.matrix() - expected).norm(), 0.0, kTol);
    EXPECT_NEAR(s.moment[0], 0.5, kTol);
    EXPECT_NEAR(s.moment[1], 0.5, kTol);
    EXPECT_NEAR((s.gram.inverse() - expected.inverse()).norm(), 0.0, kTol);
}

TEST(GramUpdate, RankOneRidgeClosedForm) {
    for (int n : {1, 2, 5, 40}) {
        RidgeStats s(3, 1.0);
        for (int i = 0; i < n; ++i) s.add(unit(3, 0), 1.0);
        EXPECT_NEAR(s.estimate()[0], n / (1.0 + n), kTol);
    }
}

// ---- KL bonus ------------------------------------------------------------------

TEST(KlBonus, FirstRoundClampsToZero) {
    // ln 1 = 0, ln ln 2 < 0.
    EXPECT_EQ(kl_bound(1, 0, 1.0), 0.0);
    EXPECT_EQ(kl_bonus(5.0, 1, 0, 1.0), 0.0);
}

TEST(KlBonus, HandEvaluation) {
    EXPECT_NEAR(kl_bound(10, 1, 3.0), 4.9264, 1e-4);
    EXPECT_NEAR(kl_bound(10, 1, 3.0), std::log(10.0) + 3.0 * std::log(std::log(11.0)), kTol);
    EXPECT_NEAR(kl_bonus(1.0, 10, 1, 3.0), 3.1389, 1e-4);
    EXPECT_EQ(kl_bonus(0.0, 10, 1, 3.0), 0.0);
}

TEST(KlBonus, FirstRoundSelectionIsGreedy) {
    LinUcbKl kl(3, 2, 1.0, 1.0);
    SelectionTrace tr;
    tr.chosen = 1;
    kl.observe(Vector::Ones(2), tr, 0.4);
    Rng rng(0);
    const auto sel = kl.select(Vector::Ones(2), 1, rng);
    EXPECT_EQ(sel.chosen, 1u);
    EXPECT_NEAR(sel.scores[1], Vector::Ones(2).dot(kl.theta(1)), kTol);
}

// ---- FTRL --------------------------------------------------------------------

TEST(Ftrl, WeightsClosedForm) {
    FtrlParams p{1.0, 1.0, 1.0, 0.0};
    EXPECT_TRUE(ftrl_weights(Vector::Zero(3), Vector::Zero(3), p).isZero());
    Vector z(1), n(1);
    z << 2.0;
    n << 4.0;
    EXPECT_NEAR(ftrl_weights(z, n, p)[0], -1.0 / 3.0, kTol);
    z << -2.0;
    EXPECT_NEAR(ftrl_weights(z, n, p)[0], 1.0 / 3.0, kTol);
    z << 1.0;  // |z| <= l1
    EXPECT_EQ(ftrl_weights(z, n, p)[0], 0.0);
}

TEST(Ftrl, UpdateHandTrace) {
    Vector z = Vector::Zero(3), n = Vector::Zero(3);
    ftrl_update(z, n, Vector::Zero(3), Vector::Zero(3), 1.0, 1.0);
    EXPECT_TRUE(z.isZero());
    EXPECT_TRUE(n.isZero());
    ftrl_update(z, n, Vector::Zero(3), unit(3, 0), 1.0, 1.0);
    EXPECT_NEAR(z[0], -1.0, kTol);
    EXPECT_NEAR(n[0], 1.0, kTol);
    EXPECT_EQ(z[1], 0.0);
    EXPECT_EQ(n[1], 0.0);
}

TEST(Ftrl, ZeroRewardFromZeroWeightsIsFixedPoint) {
    Vector z = Vector::Zero(3), n = Vector::Zero(3);
    for (int i = 0; i < 2; ++i) ftrl_update(z, n, Vector::Zero(3), Vector::Ones(3), 0.0, 1.0);
    EXPECT_TRUE(z.isZero());
    EXPECT_TRUE(n.isZero());
}

TEST(Ftrl, AccumulatorsNondecreasing) {
    Policy p = init_policy({"ftrl", {}}, 4, 6, 8);
    Rng env(3);
    std::vector<Vector> prev = std::get<Ftrl>(p.impl()).n;
    for (std::uint64_t t = 1; t <= 300; ++t) {
        const Vector x = random_binary_context(env, 6);
        p.observe(x, p.step(x, t), env.uniform());
        const auto& now = std::get<Ftrl>(p.impl()).n;
        for (std::size_t a = 0; a < now.size(); ++a) EXPECT_TRUE(((now[a] - prev[a]).array() >= 0.0).all());
        prev = now;
    }
}

// ---- epsilon-greedy FTRL -------------------------------------------------------

TEST(EpsFtrl, ZeroEpsilonFreshPicksArmZero) {
    Policy p = init_policy({"eps_ftrl", {{"epsilon", 0.0}}}, 5, 18, 4);
    EXPECT_EQ(p.step(Vector::Ones(18), 1).chosen, 0u);
}

TEST(EpsFtrl, OneObservationRidge) {
    EpsGreedyFtrl e(2, 4, 0.1, 1.0);
    SelectionTrace tr;
    tr.chosen = 1;
    e.observe(unit(4, 0), tr, 1.0);
    EXPECT_NEAR((e.theta(1) - 0.5 * unit(4, 0)).norm(), 0.0, kTol);
}

TEST(EpsFtrl, FullExplorationIsUniform) {
    EpsGreedyFtrl e(5, 3, 1.0, 1.0);
    SelectionTrace tr;
    tr.chosen = 3;
    e.observe(Vector::Ones(3), tr, 1.0);  // arm 3 would win greedily
    Rng rng(11);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 10000; ++i) ++counts[e.select(Vector::Ones(3), 1, rng).chosen];
    EXPECT_LT(chi_square_uniform(counts), 18.47);
}

// ---- Linear EXP3 ---------------------------------------------------------------

TEST(LinExp3, Probabilities) {
    for (double g : {0.0, 0.3, 1.0})
        for (double q : linexp3_probs(std::vector<double>(4, 0.0), g)) EXPECT_NEAR(q, 0.25, kTol);
    const auto p = linexp3_probs(std::vector<double>{1.0, 0.0}, 0.0);
    EXPECT_NEAR(p[0], std::exp(1.0) / (std::exp(1.0) + 1.0), kTol);
    EXPECT_NEAR(p[0], 0.7311, 1e-4);
    EXPECT_NEAR(p[1], 0.2689, 1e-4);
    for (double q : linexp3_probs(std::vector<double>{5.0, -2.0, 1e3}, 1.0)) EXPECT_NEAR(q, 1.0 / 3.0, kTol);
    // Max subtraction keeps huge logits finite.
    const auto big = linexp3_probs(std::vector<double>{1e308, 0.0}, 0.1);
    EXPECT_NEAR(big[0] + big[1], 1.0, kTol);
}

TEST(LinExp3, Update) {
    Vector theta = Vector::Zero(3);
    linexp3_update(theta, unit(3, 1), 0.0, 0.5, 0.1);
    EXPECT_TRUE(theta.isZero());
    linexp3_update(theta, Vector::Zero(3), 1.0, 0.5, 0.1);
    EXPECT_TRUE(theta.isZero());
    linexp3_update(theta, unit(3, 1), 1.0, 0.5, 0.1);
    EXPECT_NEAR((theta - 0.2 * unit(3, 1)).norm(), 0.0, kTol);
    EXPECT_THROW(linexp3_update(theta, unit(3, 1), 1.0, 0.0, 0.1), ContractError);
}

// ---- Linear FTPL ---------------------------------------------------------------

TEST(LinFtpl, VanishingNoisePicksLinearLeader) {
    LinFtpl f(3, 1, 1e6);
    f.thetas[0][0] = 5.0;
    Rng rng(6);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(f.select(Vector::Ones(1), 1, rng).chosen, 0u);
}

TEST(LinFtpl, AdditiveUpdate) {
    LinFtpl f(2, 3, 1.0);
    SelectionTrace tr;
    tr.chosen = 1;
    Vector x(3);
    x << 1, 0, 1;
    f.observe(x, tr, 0.5);
    EXPECT_NEAR((f.thetas[1] - Vector{{0.5, 0.0, 0.5}}).norm(), 0.0, kTol);
    EXPECT_TRUE(f.thetas[0].isZero());
}

TEST(LinFtpl, ChoiceReplaysFromRecordedDraws) {
    LinFtpl f(3, 2, 2.0);
    f.thetas[1] << 0.3, 0.1;
    Rng rng(17);
    const Vector x = Vector::Ones(2);
    const auto tr = f.select(x, 1, rng);
    std::vector<double> replay(3);
    for (int k = 0; k < 3; ++k) replay[k] = f.thetas[k].dot(x) - std::log(-std::log(tr.rng_draws[k])) / 2.0;
    EXPECT_EQ(tr.chosen, argmax_lowest(replay));
}

// ---- Thompson sampling ---------------------------------------------------------

TEST(TsContextual, DegenerateSamplingIsArgmaxOfMean) {
    TsContextual ts(3, 2, 0.5, 1e-14);
    ts.mu[0] << 0.1, 0.1;
    ts.mu[1] << 0.3, 0.2;
    ts.mu[2] << 0.2, 0.0;
    Rng rng(2);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(ts.select(Vector::Ones(2), 1, rng).chosen, 1u);
}

TEST(TsContextual, RankOnePosteriorUpdate) {
    TsContextual ts(1 + 1, 4, 1.0);
    SelectionTrace tr;
    tr.chosen = 0;
    ts.observe(unit(4, 0), tr, 1.0);
    Matrix precision = Matrix::Identity(4, 4);
    precision(0, 0) = 2.0;
    EXPECT_NEAR((ts.posterior[0].matrix() - precision).norm(), 0.0, kTol);
    EXPECT_NEAR((ts.mu[0] - 0.5 * unit(4, 0)).norm(), 0.0, kTol);
}

TEST(TsContextual, SymmetricArmsSplitEvenly) {
    TsContextual ts(2, 3, 0.5);
    Rng rng(123);
    int first = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) first += ts.select(Vector::Ones(3), 1, rng).chosen == 0 ? 1 : 0;
    EXPECT_LT(chi_square_uniform({first, n - first}), 10.83);  // df = 1, p = 0.001
}

TEST(TsNonContextual, ConjugateUpdate) {
    TsNonContextual ts(2, 1.0, 1.0);
    SelectionTrace tr;
    tr.chosen = 0;
    ts.observe(Vector(), tr, 1.0);
    EXPECT_NEAR(ts.mean[0], 0.5, kTol);
    EXPECT_NEAR(1.0 / ts.precision[0], 0.5, kTol);
    EXPECT_EQ(ts.mean[1], 0.0);
}

TEST(TsNonContextual, PriorIsUniformAndTinyVarianceIsGreedy) {
    TsNonContextual ts(4, 0.5);
    Rng rng(31);
    std::vector<int> counts(4, 0);
    for (int i = 0; i < 10000; ++i) ++counts[ts.select(Vector(), 1, rng).chosen];
    EXPECT_LT(chi_square_uniform(counts), 16.27);  // df = 3, p = 0.001

    TsNonContextual sharp(3, 0.5, 1e-14);
    sharp.mean = {0.2, 0.9, 0.4};
    for (int i = 0; i < 50; ++i) EXPECT_EQ(sharp.select(Vector(), 1, rng).chosen, 1u);
}

// ---- cross-policy invariants -----------------------------------------------------

class AllPolicies : public ::testing::TestWithParam<std::string> {};

TEST_P(AllPolicies, DeterministicUnderSeed) {
    const std::size_t d = 18;
    auto run = [&](std::uint64_t seed) {
        Policy p = init_policy({GetParam(), {}}, 5, d, seed);
        Rng env(99);
        std::vector<SelectionTrace> out;
        for (std::uint64_t t = 1; t <= 200; ++t) {
            const Vector x = random_binary_context(env, d, 0.3);
            auto tr = p.step(x, t);
            p.observe(x, tr, env.uniform());
            out.push_back(std::move(tr));
        }
        return out;
    };
    const auto a = run(5), b = run(5);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].chosen, b[i].chosen);
        EXPECT_EQ(a[i].scores, b[i].scores);
        EXPECT_EQ(a[i].probs, b[i].probs);
        EXPECT_EQ(a[i].rng_draws, b[i].rng_draws);
    }
}

TEST_P(AllPolicies, ObserveTouchesOnlyChosenArm) {
    const std::size_t d = 6, K = 4;
    Policy p = init_policy({GetParam(), {}}, K, d, 21);
    Rng env(4);
    for (std::uint64_t t = 1; t <= 100; ++t) {
        const Vector x = random_binary_context(env, d);
        const auto tr = p.step(x, t);
        // Score every arm under a fixed probe before and after the update.
        const PolicyVariant before = p.impl();
        p.observe(x, tr, env.uniform());
        std::visit(
            [&](const auto& now) {
                using P = std::remove_cvref_t<decltype(now)>;
                const auto& old = std::get<P>(before);
                for (std::size_t a = 0; a < K; ++a) {
                    if (a == tr.chosen) continue;
                    if constexpr (std::is_same_v<P, Exp3>) {
                        // Renormalization may rescale every weight; ratios are preserved.
                        EXPECT_NEAR(now.weights[a] / now.weights[(a + 1) % K == tr.chosen ? (a + 2) % K : (a + 1) % K],
                                    old.weights[a] / old.weights[(a + 1) % K == tr.chosen ? (a + 2) % K : (a + 1) % K],
                                    1e-12);
                    } else if constexpr (P::kContextual) {
                        EXPECT_EQ(now.theta(a), old.theta(a));
                    } else if constexpr (std::is_same_v<P, Ftpl>) {
                        EXPECT_EQ(now.cumulative[a], old.cumulative[a]);
                    } else if constexpr (std::is_same_v<P, TsNonContextual>) {
                        EXPECT_EQ(now.mean[a], old.mean[a]);
                        EXPECT_EQ(now.precision[a], old.precision[a]);
                    }
                }
            },
            p.impl());
    }
}

TEST_P(AllPolicies, EmittedSimplicesAreValid) {
    const std::size_t d = 18, K = 5;
    Policy p = init_policy({GetParam(), {}}, K, d, 8);
    Rng env(12);
    for (std::uint64_t t = 1; t <= 300; ++t) {
        const Vector x = random_binary_context(env, d, 0.3);
        const auto tr = p.step(x, t);
        ASSERT_LT(tr.chosen, K);
        ASSERT_EQ(tr.scores.size(), K);
        if (tr.probs) {
            double total = 0.0;
            for (double q : *tr.probs) {
                EXPECT_GE(q, 0.0);
                EXPECT_LE(q, 1.0);
                total += q;
            }
            EXPECT_NEAR(total, 1.0, 1e-9);
            const double floor = GetParam() == "exp3" ? 0.1 / K : 0.1 / K;
            for (double q : *tr.probs) EXPECT_GE(q, floor - 1e-15);
        }
        p.observe(x, tr, env.uniform());
    }
}

INSTANTIATE_TEST_SUITE_P(Bandit, AllPolicies,
                         ::testing::Values("exp3", "ftpl", "ts_nc", "linucb", "linucb_kl", "ftrl", "eps_ftrl",
                                           "linexp3", "linftpl", "ts_c"));

// ---- matrix maintenance ------------------------------------------------------------

TEST(Ridge, IncrementalEstimatesMatchDenseSolve) {
    const Eigen::Index d = 18;
    const std::size_t K = 3;
    LinUcb lin(K, d, 1.0, 1.0);
    EpsGreedyFtrl eps(K, d, 0.1, 1.0);
    std::vector<std::vector<std::pair<Vector, double>>> history(K);
    Rng rng(2718);
    for (int i = 0; i < 2500; ++i) {
        SelectionTrace tr;
        tr.chosen = rng.index(K);
        const Vector x = random_binary_context(rng, d, 0.3);
        const double r = rng.uniform();
        lin.observe(x, tr, r);
        eps.observe(x, tr, r);
        history[tr.chosen].emplace_back(x, r);
    }
    for (std::size_t a = 0; a < K; ++a) {
        Matrix gram = Matrix::Identity(d, d);
        Vector moment = Vector::Zero(d);
        for (const auto& [x, r] : history[a]) {
            gram += x * x.transpose();
            moment += r * x;
        }
        const Vector direct = gram.colPivHouseholderQr().solve(moment);
        EXPECT_LT((lin.theta(a) - direct).lpNorm<Eigen::Infinity>(), 1e-8);
        EXPECT_LT((eps.theta(a) - direct).lpNorm<Eigen::Infinity>(), 1e-8);
    }
}

TEST(Ridge, PositiveDefinitenessPreserved) {
    const Eigen::Index d = 18;
    LinUcb lin(2, d, 1.0, 1.0);
    TsContextual ts(2, d, 0.5);
    Rng rng(5);
    for (int i = 0; i < 1200; ++i) {
        SelectionTrace tr;
        tr.chosen = rng.index(2);
        const Vector x = random_binary_context(rng, d, 0.3);
        lin.observe(x, tr, rng.uniform());
        ts.observe(x, tr, rng.uniform());
        ASSERT_EQ(Eigen::LLT<Matrix>(lin.stats[tr.chosen].gram.matrix()).info(), Eigen::Success);
        ASSERT_EQ(Eigen::LLT<Matrix>(ts.posterior[tr.chosen].inverse()).info(), Eigen::Success);
    }
}

TEST(ThetaExport, NonContextualPolicyIsRejected) {
    Policy p = init_policy({"ts_nc", {}}, 5, 18, 1);
    EXPECT_THROW(p.theta(), ContractError);
    Policy q = init_policy({"linucb", {}}, 5, 18, 1);
    EXPECT_TRUE(q.theta().isZero());
    EXPECT_EQ(q.theta().rows(), 5);
    EXPECT_EQ(q.theta().cols(), 18);
}

} // namespace
} // namespace rlab::bandit
