#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "rlab/dataset.hpp"
#include "rlab/experiment.hpp"
#include "rlab/report.hpp"

using namespace rlab;
using namespace rlab::experiment;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path = fs::temp_directory_path() / (std::string("rlab_") + info->test_suite_name() + "_" + info->name());
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
    std::vector<std::string> out;
    std::istringstream in(slurp(p));
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

fs::path write_dataset(const fs::path& dir, std::size_t n, const std::string& name = "synth") {
    const auto p = dir / (name + ".jsonl");
    std::ofstream out(p);
    for (std::size_t i = 0; i < n; ++i)
        out << nlohmann::json{{"id", "q" + std::to_string(i)},
                              {"query", "synthetic question number " + std::to_string(i)},
                              {"references", {"answer " + std::to_string(i)}},
                              {"scenario", "abstractive"}}
                   .dump()
            << "\n";
    return p;
}

ExperimentConfig base_config(const TempDir& d, std::size_t n, std::uint64_t T) {
    ExperimentConfig c;
    c.dataset = write_dataset(d.path, n);
    c.rounds = T;
    c.seeds = {7};
    c.output_dir = d.path / "runs";
    c.policy = {"linucb", {}};
    return c;
}

nlohmann::json constant_env(std::vector<double> means) {
    nlohmann::json theta = nlohmann::json::array();
    for (double m : means) {
        std::vector<double> row(18, 0.0);
        row[17] = m;
        theta.push_back(row);
    }
    return {{"arms", means.size()}, {"theta_star", theta}, {"feature_p", 0.3}, {"sigma", 0.0}};
}

} // namespace

// ---- configuration ---------------------------------------------------------

TEST(Config, DefaultsAndOverrides) {
    const auto c = config_from_json(nlohmann::json::parse(R"({
        "policy": {"name": "linucb", "params": {"alpha": 0.5}},
        "include_no_rewrite": true, "rounds": 10, "seeds": [1, 2],
        "models": {"answerer": {"temperature": 0.0}}, "dataset": "d.jsonl"})"),
                                  "/base");
    EXPECT_EQ(c.policy.params.at("alpha"), 0.5);
    EXPECT_EQ(c.arms.size(), 6u);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2}));
    EXPECT_EQ(c.models.answerer.model, "gpt-4o-2024-08-06");
    EXPECT_EQ(c.models.answerer.temperature, 0.0);
    EXPECT_EQ(c.dataset, fs::path("/base/d.jsonl"));
    EXPECT_EQ(c.resolved_dataset_name(), "d");
    EXPECT_DOUBLE_EQ(c.lambda, 0.1);
}

TEST(Config, ErrorsNameTheField) {
    auto field_of = [](const char* text) {
        try {
            (void)config_from_json(nlohmann::json::parse(text));
        } catch (const ConfigError& e) {
            return e.field();
        }
        return std::string("none");
    };
    EXPECT_EQ(field_of(R"({"rounds": 0})"), "rounds");
    EXPECT_EQ(field_of(R"({"seeds": []})"), "seeds");
    EXPECT_EQ(field_of(R"({"roundz": 5})"), "roundz");
    EXPECT_EQ(field_of(R"({"reward_weights": {"alpha": 0.5, "beta": 0.3, "gamma": 0.1}})"), "reward_weights");
    EXPECT_EQ(field_of(R"({"backend": "replay"})"), "cache");
    EXPECT_EQ(field_of(R"({"policy": {"name": "linucb", "params": {"alpah": 1}}})"), "none");
    EXPECT_EQ(field_of(R"({"policy": "nope"})"), "policy.name");
    EXPECT_EQ(field_of(R"({"arms": ["Paraphrase", "Paraphrase"]})"), "arms");
}

TEST(Config, RoundTripsThroughJson) {
    ExperimentConfig c;
    c.dataset = "x.jsonl";
    c.rounds = 12;
    c.evaluate_all_arms = true;
    const auto back = config_from_json(nlohmann::json::parse(config_to_json(c).dump()));
    EXPECT_EQ(config_to_json(back).dump(), config_to_json(c).dump());
}

// ---- dataset ---------------------------------------------------------------

TEST(Dataset, LoadsAndValidates) {
    TempDir d;
    const auto p = d.path / "ds.jsonl";
    {
        std::ofstream out(p);
        out << R"({"id": "a", "query": "Q1", "references": ["x"], "scenario": "extractive", "context": "ctx"})" << "\n\n";
        out << R"({"id": "b", "query": "Q2", "references": ["B"], "choices": ["one", "two"], "scenario": "multiple-choice"})"
            << "\n";
    }
    const auto recs = data::load_dataset(p);
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[0].context, "ctx");
    EXPECT_EQ(recs[1].scenario, prompts::Scenario::MultipleChoice);
}

TEST(Dataset, ErrorsCarryLineNumbers) {
    TempDir d;
    auto expect_line = [&](const std::string& body, const std::string& where) {
        const auto p = d.path / "bad.jsonl";
        {
            std::ofstream out(p);
            out << body;
        }
        try {
            (void)data::load_dataset(p);
            ADD_FAILURE() << "no error for " << body;
        } catch (const ProtocolError& e) {
            EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
        }
    };
    const std::string ok = R"({"id": "a", "query": "Q", "references": ["x"]})";
    expect_line(ok + "\n" + R"({"id": "b", "query": "Q", "references": []})" + "\n", "bad.jsonl:2:");
    expect_line(ok + "\n" + ok + "\n", "duplicate id");
    expect_line(R"({"id": "m", "query": "Q", "references": ["A"], "scenario": "multiple-choice"})", "no choices");
    expect_line(R"({"id": "m", "query": "Q", "references": ["A"], "choices": ["x"]})", "not multiple-choice");
    expect_line(ok + "\n{not json\n", "bad.jsonl:2:");
}

TEST(QueryOrder, WithoutReplacementWhenLargeEnough) {
    const auto o = query_order(50, 40, 3);
    EXPECT_EQ(std::set<std::size_t>(o.begin(), o.end()).size(), 40u);
    EXPECT_EQ(o, query_order(50, 40, 3));
    EXPECT_NE(o, query_order(50, 40, 4));
}

TEST(QueryOrder, BootstrapOnlyBeyondDataset) {
    const auto o = query_order(10, 25, 3);
    ASSERT_EQ(o.size(), 25u);
    EXPECT_EQ(std::set<std::size_t>(o.begin(), o.begin() + 10).size(), 10u);
    for (auto i : o) EXPECT_LT(i, 10u);
    const auto shorter = query_order(10, 10, 3);
    EXPECT_TRUE(std::equal(shorter.begin(), shorter.end(), o.begin()));
}

// ---- the online loop -------------------------------------------------------

TEST(Run, DeterministicAcrossExecutions) {
    TempDir d;
    auto c = base_config(d, 120, 100);
    c.output_dir = d.path / "a";
    const auto a = run_seed(c, 7);
    c.output_dir = d.path / "b";
    const auto b = run_seed(c, 7);
    EXPECT_EQ(slurp(a.log_path), slurp(b.log_path));
    EXPECT_EQ(a.rounds, 100u);
    EXPECT_EQ(a.failures, 0u);
    report::report_bundle(d.path / "a", d.path / "ra");
    report::report_bundle(d.path / "b", d.path / "rb");
    for (const auto& e : fs::directory_iterator(d.path / "ra"))
        EXPECT_EQ(slurp(e.path()), slurp(d.path / "rb" / e.path().filename())) << e.path();
}

TEST(Run, CallBudgetPerRound) {
    TempDir d;
    auto c = base_config(d, 60, 60);
    c.arms = prompts::enabled_arms(true);
    const auto s = run_seed(c, 7);
    const auto log = read_run_log(s.log_path);
    for (const auto& r : log.rounds) {
        EXPECT_LE(r.calls, 4u);
        EXPECT_EQ(r.calls, r.arm_name == "NoRewrite" ? 3u : 4u);
    }
}

TEST(Run, EvaluateAllArmsAudit) {
    TempDir d;
    auto c = base_config(d, 30, 30);
    c.arms = prompts::enabled_arms(true);
    c.evaluate_all_arms = true;
    c.env = constant_env({0.2, 0.4, 0.6, 0.8, 0.5, 0.3});
    const auto s = run_seed(c, 7);
    const auto log = read_run_log(s.log_path);
    for (const auto& r : log.rounds) {
        EXPECT_EQ(r.calls, 1u + 5u + 6u + 6u);
        ASSERT_EQ(r.all_arms.size(), 6u);
        EXPECT_EQ(r.all_arms[r.arm].breakdown.r, r.reward);
        double best = 0.0;
        for (const auto& o : r.all_arms) best = std::max(best, o.breakdown.r);
        EXPECT_EQ(*r.oracle, best);
        EXPECT_EQ(*r.baseline, r.all_arms[5].breakdown.r);
        EXPECT_EQ(r.all_arms[5].rewritten, r.query);
    }
    EXPECT_TRUE(s.cumulative_regret.has_value());
    EXPECT_TRUE(s.win_rate.has_value());
}

TEST(Run, NoiselessOracleMatchesEnvironment) {
    TempDir d;
    auto c = base_config(d, 40, 40);
    c.evaluate_all_arms = true;
    c.env = constant_env({0.0, 1.0, 0.0, 0.0, 0.0});
    const auto log = read_run_log(run_seed(c, 7).log_path);
    for (const auto& r : log.rounds) {
        EXPECT_NEAR(*r.oracle, 1.0, 1e-12);
        EXPECT_EQ(r.all_arms[1].breakdown.s_llm, 1.0);
    }
}

TEST(Run, OnlineContractAndRewardRecomputation) {
    TempDir d;
    auto c = base_config(d, 80, 80);
    c.policy = {"ts_c", {}};
    const auto log = read_run_log(run_seed(c, 7).log_path);
    for (std::size_t i = 0; i < log.rounds.size(); ++i) {
        const auto& r = log.rounds[i];
        EXPECT_LT(r.seq_select, r.seq_update);
        if (i + 1 < log.rounds.size()) {
            EXPECT_LT(r.seq_update, log.rounds[i + 1].seq_select);
        }
        const auto& b = *r.breakdown;
        EXPECT_EQ(std::clamp(reward::combine(b.s_llm, b.s_fuzz, b.s_bleu, b.weights), 0.0, 1.0), r.reward);
        EXPECT_EQ(reward::composite_reward(b.s_llm, b.s_fuzz, b.s_bleu, b.weights).r, r.reward);
    }
}

TEST(Run, StaticNoRewriteMatchesAllArmsBaseline) {
    TempDir d;
    auto c = base_config(d, 50, 50);
    c.arms = prompts::enabled_arms(true);
    c.env = constant_env({0.2, 0.4, 0.6, 0.8, 0.5, 0.3});
    c.output_dir = d.path / "static";
    const auto st = run_static_policy(c, prompts::ArmId::NoRewrite).front();
    c.output_dir = d.path / "static2";
    const auto st2 = run_static_policy(c, prompts::ArmId::NoRewrite).front();
    c.output_dir = d.path / "all";
    c.evaluate_all_arms = true;
    const auto all = run_seed(c, 7);
    const auto ls = read_run_log(st.log_path), ls2 = read_run_log(st2.log_path), la = read_run_log(all.log_path);
    ASSERT_EQ(ls.rounds.size(), la.rounds.size());
    for (std::size_t i = 0; i < ls.rounds.size(); ++i) {
        EXPECT_EQ(ls.rounds[i].calls, 3u);
        EXPECT_EQ(ls.rounds[i].rewritten, ls.rounds[i].query);
        EXPECT_EQ(ls.rounds[i].query_id, la.rounds[i].query_id);
        EXPECT_EQ(ls.rounds[i].reward, *la.rounds[i].baseline);
        EXPECT_EQ(ls.rounds[i].reward, ls2.rounds[i].reward);
    }
    const std::vector<metrics::RoundLog> a(ls.rounds.begin(), ls.rounds.end());
    EXPECT_EQ(metrics::win_rate(a, a).win, 0.0);
}

TEST(Run, StaticArmAccuracyMatchesEnvMean) {
    TempDir d;
    auto c = base_config(d, 2000, 2000);
    c.env = constant_env({0.7, 0.5, 0.5, 0.5, 0.5});
    const auto s = run_static_policy(c, prompts::ArmId::Paraphrase).front();
    ASSERT_TRUE(s.accuracy.has_value());
    EXPECT_NEAR(*s.accuracy, 0.7, 3.0 * std::sqrt(0.21 / 2000));
    EXPECT_EQ(s.arm_frequencies[0], 1.0);
}

TEST(Run, ContextualBeatsExp3OnContextEnv) {
    TempDir d;
    auto c = base_config(d, 5000, 5000);
    c.evaluate_all_arms = true;
    nlohmann::json env = {{"canonical", "context_dependent"}};
    c.env = env;
    c.policy = {"ts_c", {}};
    const auto ts = run_seed(c, 7);
    c.policy = {"exp3", {}};
    const auto ex = run_seed(c, 7);
    ASSERT_TRUE(ts.cumulative_regret && ex.cumulative_regret);
    EXPECT_LT(*ts.cumulative_regret, *ex.cumulative_regret);
}

TEST(Run, ExistingLogNeedsResume) {
    TempDir d;
    auto c = base_config(d, 20, 20);
    run_seed(c, 7);
    EXPECT_THROW(run_seed(c, 7), ConfigError);
    c.resume = true;
    c.lambda = 0.2;
    EXPECT_THROW(run_seed(c, 7), ConfigError);
}

TEST(Run, ResumeAfterCrashIsBitIdentical) {
    TempDir d;
    auto c = base_config(d, 90, 90);
    c.policy = {"ts_c", {}};
    c.output_dir = d.path / "full";
    const auto full = run_seed(c, 7);
    const auto lines = lines_of(full.log_path);

    c.output_dir = d.path / "crashed";
    fs::create_directories(c.output_dir);
    const auto crashed = c.output_dir / full.log_path.filename();
    {
        std::ofstream out(crashed, std::ios::binary);
        for (std::size_t i = 0; i <= 40; ++i) out << lines[i] << "\n";
        out << lines[41].substr(0, lines[41].size() / 2);
    }
    c.resume = true;
    const auto resumed = run_seed(c, 7);
    EXPECT_EQ(slurp(resumed.log_path), slurp(full.log_path));
}

TEST(Run, ReplayFromWarmCacheMakesNoBackendCalls) {
    TempDir d;
    auto c = base_config(d, 60, 60);
    c.cache = d.path / "cache.jsonl";
    c.output_dir = d.path / "record";
    const auto rec = run_seed(c, 7);
    EXPECT_GT(rec.counters.backend_calls, 0u);

    c.backend = BackendMode::Replay;
    c.strict_replay = true;
    c.output_dir = d.path / "replay";
    const auto rep = run_seed(c, 7);
    EXPECT_EQ(rep.counters.backend_calls, 0u);
    EXPECT_EQ(rep.counters.network_calls, 0u);
    EXPECT_EQ(rep.counters.cache_hits, rep.counters.requests);
    const auto a = lines_of(rec.log_path), b = lines_of(rep.log_path);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 1; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Run, FailedRoundsAreLoggedAndBudgeted) {
    TempDir d;
    auto c = base_config(d, 100, 60);
    c.cache = d.path / "cache.jsonl";
    c.output_dir = d.path / "record";
    run_seed(c, 7);

    c.backend = BackendMode::Replay;
    c.strict_replay = true;
    c.rounds = 80;
    c.output_dir = d.path / "strict";
    EXPECT_THROW(run_seed(c, 7), Error);

    c.max_failure_rate = 0.3;
    c.output_dir = d.path / "tolerant";
    const auto s = run_seed(c, 7);
    EXPECT_EQ(s.rounds, 60u);
    EXPECT_EQ(s.failures, 20u);
    const auto log = read_run_log(s.log_path);
    EXPECT_EQ(log.errors.front().t, 61u);
    EXPECT_EQ(log.errors.front().stage, "tag");
    (void)replay_policy(log);
}

// ---- dataset construction --------------------------------------------------

TEST(Construct, FiltersFollowTheRules) {
    TempDir d;
    const auto p = d.path / "src.jsonl";
    {
        std::ofstream out(p);
        auto line = [&](const std::string& id, nlohmann::json synth) {
            out << nlohmann::json{{"id", id}, {"query", "question " + id}, {"references", {"ans " + id}},
                                  {"synthetic", synth}}
                       .dump()
                << "\n";
        };
        line("f0", {{"failing_perturbations", 0}});
        line("f2", {{"failing_perturbations", 2}});
        line("f5", {{"failing_perturbations", 5}});
        line("f3", {{"failing_perturbations", 3}});
        line("un", {{"unanswerable", true}, {"failing_perturbations", 2}});
        line("iv", {{"failing_perturbations", 2}, {"invalid_perturbations", {4}}});
    }
    const auto src = data::load_dataset(p);
    auto backend = std::make_shared<env::SyntheticBackend>(env::context_dependent_spec(1), data::synthetic_records(src));
    gateway::Gateway gw(backend);
    const auto res = data::construct_dataset(src, gw, ModelSettings{}, {.seed = 5});
    ASSERT_EQ(res.audit.size(), 6u);
    std::map<std::string, std::string> reason;
    for (const auto& a : res.audit) reason[a.id] = a.drop_reason;
    EXPECT_EQ(reason["f0"], "0 incorrect");
    EXPECT_EQ(reason["f2"], "");
    EXPECT_EQ(reason["f5"], "5 incorrect");
    EXPECT_EQ(reason["f3"], "");
    EXPECT_EQ(reason["un"], "answerability");
    EXPECT_EQ(reason["iv"], "perturbation-invalid");
    ASSERT_EQ(res.kept.size(), 2u);
    EXPECT_EQ(res.kept[0].id, "f2");
    EXPECT_TRUE(res.kept[0].query.starts_with("[PERTURB:"));
    EXPECT_TRUE(res.kept[0].query.ends_with("question f2"));
    const auto& a2 = res.audit[1];
    EXPECT_EQ(a2.incorrect, 2u);
    EXPECT_EQ(a2.perturbations[0].correct, 0);
    EXPECT_EQ(a2.perturbations[2].correct, 1);
    EXPECT_TRUE(data::to_json(a2)["kept"].get<bool>());
    const auto again = data::construct_dataset(src, gw, ModelSettings{}, {.seed = 5});
    EXPECT_EQ(again.kept[0].query, res.kept[0].query);
}

TEST(Construct, RejectsMalformedPerturbationList) {
    EXPECT_THROW(data::parse_perturbations(R"({"perturbations": ["a", "b"]})"), ProtocolError);
    EXPECT_THROW(data::parse_perturbations("not json"), ProtocolError);
    EXPECT_EQ(data::parse_perturbations(R"({"perturbations": ["a", "b", "c", "d", " e "]})").back(), "e");
}

// ---- simulation ------------------------------------------------------------

TEST(Simulate, OraclePolicyHasNoRegretAndLogsRoundTrip) {
    TempDir d;
    const auto spec = env::context_dependent_spec(0);
    const auto sim = simulate(spec, {"linucb", {}}, 300, 4);
    const auto path = d.path / log_file_name(sim.header.label, 4);
    write_simulation_log(path, sim);
    const auto log = read_run_log(path);
    ASSERT_EQ(log.rounds.size(), 300u);
    for (std::size_t i = 0; i < 300; ++i) {
        EXPECT_EQ(log.rounds[i].reward, sim.logs[i].reward);
        EXPECT_EQ(*log.rounds[i].oracle, *sim.logs[i].oracle);
        EXPECT_GE(*sim.logs[i].oracle, sim.logs[i].reward);
    }
    const auto replayed = replay_policy(log);
    EXPECT_EQ(replayed.last_round(), 300u);
}

TEST(Simulate, SameSeedSharesContextsAcrossPolicies) {
    const auto spec = env::context_dependent_spec(0);
    const auto a = simulate(spec, {"exp3", {}}, 50, 9);
    const auto b = simulate(spec, {"ts_c", {}}, 50, 9);
    for (std::size_t i = 0; i < 50; ++i) {
        EXPECT_EQ(a.logs[i].context, b.logs[i].context);
        EXPECT_EQ(*a.logs[i].oracle, *b.logs[i].oracle);
    }
}

// ---- report ----------------------------------------------------------------

TEST(Report, EmptyDirectoryIsAnError) {
    TempDir d;
    EXPECT_THROW(report::report_bundle(d.path, d.path / "out"), Error);
    EXPECT_THROW(report::report_bundle(d.path / "missing", d.path / "out"), Error);
}

TEST(Report, CorruptLineNamesLine) {
    TempDir d;
    const auto sim = simulate(env::context_dependent_spec(0), {"exp3", {}}, 5, 1);
    const auto path = d.path / "run.jsonl";
    write_simulation_log(path, sim);
    auto lines = lines_of(path);
    lines[3] = "{\"type\": \"round\", broken";
    {
        std::ofstream out(path, std::ios::binary);
        for (const auto& l : lines) out << l << "\n";
    }
    try {
        report::report_bundle(d.path, d.path / "out");
        FAIL();
    } catch (const ProtocolError& e) {
        EXPECT_NE(std::string(e.what()).find("run.jsonl:4:"), std::string::npos) << e.what();
    }
}

TEST(Report, CurvesAverageSeedsPointwise) {
    TempDir d;
    const auto spec = env::context_dependent_spec(0);
    const auto a = simulate(spec, {"exp3", {}}, 20, 1);
    const auto b = simulate(spec, {"exp3", {}}, 20, 2);
    write_simulation_log(d.path / log_file_name("exp3", 1), a);
    write_simulation_log(d.path / log_file_name("exp3", 2), b);
    const auto files = report::build_report(report::load_run_dir(d.path));
    const auto it = std::find_if(files.begin(), files.end(), [](const auto& f) { return f.name == "curves.csv"; });
    ASSERT_NE(it, files.end());
    std::istringstream in(it->body);
    std::string header, row;
    std::getline(in, header);
    double ca = 0.0, cb = 0.0, ra = 0.0, rb = 0.0;
    for (int t = 0; t < 20; ++t) {
        std::getline(in, row);
        ca += a.logs[t].reward;
        cb += b.logs[t].reward;
        ra += *a.logs[t].oracle - a.logs[t].reward;
        rb += *b.logs[t].oracle - b.logs[t].reward;
        std::vector<std::string> cells;
        std::stringstream rs(row);
        for (std::string cell; std::getline(rs, cell, ',');) cells.push_back(cell);
        ASSERT_EQ(cells.size(), 5u);
        EXPECT_EQ(std::stoi(cells[2]), t + 1);
        EXPECT_NEAR(std::stod(cells[3]), (ca + cb) / 2, 1e-8);
        EXPECT_NEAR(std::stod(cells[4]), (ra + rb) / 2, 1e-8);
    }
}

TEST(Report, GoldenFixtureIsByteStable) {
    const fs::path fixture = fs::path(RLAB_GOLDEN_DIR) / "report_fixture";
    const auto files = report::build_report(report::load_run_dir(fixture / "runs"));
    for (const auto& f : files) {
        const auto golden = fixture / "expected" / f.name;
        ASSERT_TRUE(fs::exists(golden)) << golden;
        EXPECT_EQ(f.body, slurp(golden)) << f.name;
    }
}
