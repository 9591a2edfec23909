// rlab: command-line front end for experiments, simulations, dataset
// construction, one-off tagging/rewriting, reward-weight sweeps and reports.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rlab/dataset.hpp"
#include "rlab/experiment.hpp"
#include "rlab/report.hpp"
#include "rlab/reward.hpp"
#include "rlab/rewrite.hpp"
#include "rlab/synthetic_env.hpp"
#include "rlab/tagger.hpp"

namespace fs = std::filesystem;
using namespace rlab;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool resume = false;
    bool strict_replay = false;
};

experiment::ExperimentConfig load(const Globals& g, bool need_dataset) {
    experiment::ExperimentConfig c;
    if (!g.config.empty()) c = experiment::load_config(g.config);
    if (g.seed) c.seeds = {*g.seed};
    if (!g.out.empty()) c.output_dir = g.out;
    c.resume = g.resume;
    if (g.strict_replay) c.strict_replay = true;
    if (need_dataset && c.dataset.empty()) throw ConfigError("dataset", "no dataset configured (use --config)");
    c.validate();
    return c;
}

std::string opt_str(const std::optional<double>& v) { return v ? report::fmt(*v) : std::string("-"); }

void print_summaries(const std::vector<experiment::RunSummary>& runs) {
    std::printf("%-22s %6s %7s %6s %12s %12s %10s %9s\n", "policy", "seed", "rounds", "fail", "R_adj", "regret",
                "win%", "accuracy");
    for (const auto& s : runs)
        std::printf("%-22s %6llu %7llu %6llu %12s %12s %10s %9s\n", s.label.c_str(),
                    static_cast<unsigned long long>(s.seed), static_cast<unsigned long long>(s.rounds),
                    static_cast<unsigned long long>(s.failures), report::fmt(s.r_adj).c_str(),
                    opt_str(s.cumulative_regret).c_str(), opt_str(s.win_rate).c_str(), opt_str(s.accuracy).c_str());
    for (const auto& s : runs) std::printf("log: %s\n", s.log_path.string().c_str());
}

std::vector<reward::ComponentScores> read_component_scores(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("input", "cannot open '" + path.string() + "'");
    std::vector<reward::ComponentScores> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            reward::ComponentScores c;
            c.s_llm = j.at("s_llm").get<double>();
            c.s_fuzz = j.at("s_fuzz").get<double>();
            c.s_bleu = j.at("s_bleu").get<double>();
            c.correct = j.at("correct").is_boolean() ? j["correct"].get<bool>() : j["correct"].get<int>() != 0;
            out.push_back(c);
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

prompts::ArmId parse_arm(const std::string& name) {
    const auto a = prompts::arm_from_name(name);
    if (!a) throw ConfigError("arm", "unknown arm '" + name + "'");
    return *a;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rlab: online query-rewrite selection with bandit policies"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "Experiment configuration (JSON)");
    app.add_option("--seed", g.seed, "Run a single seed, overriding the configured list");
    app.add_option("--out", g.out, "Output directory, overriding output_dir");
    app.add_flag("--resume", g.resume, "Continue existing round logs from their last complete record");
    app.add_flag("--strict-replay", g.strict_replay, "Serve every model call from the cache; misses are errors");

    auto* run = app.add_subcommand("run", "Run the bandit rewrite loop over a dataset");

    auto* stat = app.add_subcommand("static", "Run the pipeline with one fixed arm");
    std::string static_arm = "NoRewrite";
    stat->add_option("--arm", static_arm, "Arm name (Paraphrase, Simplify, Disambiguate, Expand, ClarifyTerms, NoRewrite)");

    auto* sim = app.add_subcommand("simulate", "Run policies against the synthetic environment directly");
    std::vector<std::string> sim_policies;
    bool sim_static = false;
    sim->add_option("--policy", sim_policies, "Policy names (default: the configured policy)");
    sim->add_flag("--static-arms", sim_static, "Also run every static single-arm policy");

    auto* cons = app.add_subcommand("construct-dataset", "Filter source records by answerability and perturbation validity");
    std::string cons_in, cons_out, cons_audit;
    double min_overlap = 0.3;
    cons->add_option("--input", cons_in, "Source dataset (JSONL)")->required();
    cons->add_option("--output", cons_out, "Filtered dataset (JSONL)")->required();
    cons->add_option("--audit", cons_audit, "Perturbation audit (JSONL); default <output>.audit.jsonl");
    cons->add_option("--min-overlap", min_overlap, "Minimum unigram overlap of a valid perturbation");

    auto* tag = app.add_subcommand("tag-features", "Tag the 17 linguistic features of queries");
    std::string tag_query, tag_input;
    std::size_t stability = 0;
    tag->add_option("--query", tag_query, "A single query");
    tag->add_option("--input", tag_input, "Dataset (JSONL) whose queries are tagged");
    tag->add_option("--stability", stability, "Repeat tagging N times and report per-feature agreement");

    auto* rw = app.add_subcommand("rewrite", "Apply one rewrite arm to a query");
    std::string rw_arm, rw_query;
    rw->add_option("--arm", rw_arm, "Arm name")->required();
    rw->add_option("--query", rw_query, "Query text")->required();

    auto* sweep = app.add_subcommand("sweep-weights", "Grid-search reward weights by ROC-AUC");
    std::string sweep_in, sweep_out;
    std::size_t sweep_synth = 0;
    double step = 0.05;
    sweep->add_option("--input", sweep_in, "Labeled components (JSONL with s_llm, s_fuzz, s_bleu, correct)");
    sweep->add_option("--synthetic", sweep_synth, "Generate N synthetic labeled triples instead");
    sweep->add_option("--step", step, "Simplex grid spacing");
    sweep->add_option("--csv", sweep_out, "Write the full sweep CSV here (default: stdout)");

    auto* rep = app.add_subcommand("report", "Summarize round logs into CSV tables");
    std::string rep_dir, rep_out;
    rep->add_option("--run-dir", rep_dir, "Directory of round logs (default: --out or output_dir)");
    rep->add_option("--report-dir", rep_out, "Where to write CSVs (default: <run-dir>/report)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto c = load(g, true);
            if (c.evaluate_all_arms)
                std::fprintf(stderr, "note: evaluate_all_arms multiplies model calls per round by about %zu\n",
                             c.arms.size());
            print_summaries(experiment::run_experiment(c));
        } else if (*stat) {
            const auto c = load(g, true);
            print_summaries(experiment::run_static_policy(c, parse_arm(static_arm)));
        } else if (*sim) {
            const auto c = load(g, false);
            if (sim_policies.empty()) sim_policies.push_back(c.policy.name);
            fs::create_directories(c.output_dir);
            std::vector<experiment::RunSummary> all;
            for (auto seed : c.seeds) {
                const auto spec = env::spec_from_json(c.env, seed);
                std::vector<std::pair<bandit::PolicySpec, std::optional<std::size_t>>> jobs;
                for (const auto& p : sim_policies)
                    jobs.push_back({p == c.policy.name ? c.policy : bandit::PolicySpec{p, {}}, std::nullopt});
                if (sim_static)
                    for (std::size_t k = 0; k < spec.arms; ++k) jobs.push_back({{"static", {}}, k});
                for (const auto& [ps, arm] : jobs) {
                    const auto r = experiment::simulate(spec, ps, c.rounds, seed, arm, c.lambda);
                    const auto path = c.output_dir / experiment::log_file_name(r.header.label, seed);
                    if (fs::exists(path) && !c.resume)
                        throw ConfigError("output_dir", "log '" + path.string() + "' exists");
                    experiment::write_simulation_log(path, r);
                    all.push_back(experiment::summarize(experiment::read_run_log(path), spec.arms));
                }
            }
            print_summaries(all);
        } else if (*cons) {
            const auto c = load(g, false);
            const auto src = data::load_dataset(cons_in);
            auto bundle = experiment::make_gateway(c, src, c.seeds.front());
            data::ConstructOptions opt;
            opt.seed = c.seeds.front();
            opt.min_overlap = min_overlap;
            const auto res = data::construct_dataset(src, *bundle.gateway, c.models, opt);
            data::write_dataset(cons_out, res.kept);
            const fs::path audit = cons_audit.empty() ? fs::path(cons_out + ".audit.jsonl") : fs::path(cons_audit);
            if (audit.has_parent_path()) fs::create_directories(audit.parent_path());
            std::ofstream a(audit, std::ios::binary | std::ios::trunc);
            std::map<std::string, std::size_t> reasons;
            for (const auto& r : res.audit) {
                a << data::to_json(r).dump() << '\n';
                if (!r.drop_reason.empty()) ++reasons[r.drop_reason];
            }
            std::printf("kept %zu of %zu records\n", res.kept.size(), src.size());
            for (const auto& [why, n] : reasons) std::printf("dropped %zu: %s\n", n, why.c_str());
            std::printf("audit: %s\n", audit.string().c_str());
        } else if (*tag) {
            const auto c = load(g, false);
            std::vector<data::DatasetRecord> recs;
            if (!tag_input.empty()) recs = data::load_dataset(tag_input);
            if (!tag_query.empty()) recs.push_back({"cli", tag_query, {"-"}, {}, prompts::Scenario::Abstractive, "", {}});
            if (recs.empty()) throw ConfigError("query", "pass --query or --input");
            auto bundle = experiment::make_gateway(c, recs, c.seeds.front());
            for (const auto& r : recs) {
                nlohmann::ordered_json j;
                j["id"] = r.id;
                if (stability > 0) {
                    const auto s = stability_audit(r.query, stability, *bundle.gateway, c.models.tagger);
                    j["features"] = features_to_json(s.modal);
                    j["full_vector_agreement"] = s.full_vector;
                    nlohmann::ordered_json per;
                    for (std::size_t i = 0; i < kNumFeatures; ++i)
                        per[std::string(kFeatureSchema[i].name)] = s.per_feature[i];
                    j["per_feature_agreement"] = per;
                } else {
                    j["features"] = features_to_json(tag_features(r.query, *bundle.gateway, c.models.tagger));
                }
                std::cout << j.dump() << '\n';
            }
        } else if (*rw) {
            const auto c = load(g, false);
            const std::vector<data::DatasetRecord> recs{
                {"cli", rw_query, {"-"}, {}, prompts::Scenario::Abstractive, "", {}}};
            auto bundle = experiment::make_gateway(c, recs, c.seeds.front());
            std::cout << apply_rewrite(parse_arm(rw_arm), rw_query, *bundle.gateway, c.models.rewriter).rewritten
                      << '\n';
        } else if (*sweep) {
            std::vector<reward::ComponentScores> items;
            if (!sweep_in.empty()) items = read_component_scores(sweep_in);
            else if (sweep_synth > 0) items = env::labeled_component_scores(sweep_synth, g.seed.value_or(0));
            else throw ConfigError("input", "pass --input or --synthetic");
            const auto cells = reward::simplex_sweep(items, step);
            const auto csv = reward::sweep_csv(cells);
            if (sweep_out.empty()) {
                std::cout << csv;
            } else {
                std::ofstream(sweep_out, std::ios::binary) << csv;
                const auto& b = cells.front();
                std::printf("best alpha=%s beta=%s gamma=%s auc=%s\n", report::fmt(b.weights.alpha).c_str(),
                            report::fmt(b.weights.beta).c_str(), report::fmt(b.weights.gamma).c_str(),
                            report::fmt(b.auc).c_str());
            }
        } else if (*rep) {
            fs::path dir = rep_dir;
            if (dir.empty()) dir = g.out.empty() ? load(g, false).output_dir : fs::path(g.out);
            const fs::path out = rep_out.empty() ? dir / "report" : fs::path(rep_out);
            for (const auto& p : report::report_bundle(dir, out)) std::printf("%s\n", p.string().c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error [%s]: %s\n", e.field().c_str(), e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
