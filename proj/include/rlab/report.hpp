#pragma once

// Turns a directory of round logs into summary tables and per-figure CSVs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rlab/error.hpp"
#include "rlab/experiment.hpp"
#include "rlab/metrics.hpp"

namespace rlab::report {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v == 0.0 ? 0.0 : v);
    return buf;
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

/// All round logs in a directory (non-recursive, sorted by file name).
/// JSONL files whose first record is not a log header are ignored.
inline std::vector<experiment::RunLog> load_run_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw Error("run directory '" + dir.string() + "' does not exist");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<experiment::RunLog> logs;
    for (const auto& f : files) {
        std::ifstream in(f);
        std::string first;
        std::getline(in, first);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(first);
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(f.string() + ":1: " + e.what());
        }
        if (!j.is_object() || j.value("type", std::string()) != "header") continue;
        logs.push_back(experiment::read_run_log(f));
    }
    if (logs.empty()) throw Error("no round logs found in '" + dir.string() + "'");
    return logs;
}

struct Group {
    std::string label;
    std::string dataset;
    std::vector<const experiment::RunLog*> runs;  // sorted by seed
    std::size_t arms = 0;
};

inline std::vector<Group> group_runs(const std::vector<experiment::RunLog>& logs) {
    std::map<std::pair<std::string, std::string>, Group> by;
    for (const auto& l : logs) {
        auto& g = by[{l.header.label, l.header.dataset}];
        g.label = l.header.label;
        g.dataset = l.header.dataset;
        if (g.arms != 0 && g.arms != l.header.arms.size())
            throw ProtocolError("runs of '" + g.label + "' disagree on the number of arms");
        g.arms = l.header.arms.size();
        g.runs.push_back(&l);
    }
    std::vector<Group> out;
    for (auto& [k, g] : by) {
        (void)k;
        std::sort(g.runs.begin(), g.runs.end(),
                  [](const auto* a, const auto* b) { return a->header.seed < b->header.seed; });
        out.push_back(std::move(g));
    }
    return out;
}

inline std::vector<metrics::RoundLog> plain(const experiment::RunLog& l) {
    return {l.rounds.begin(), l.rounds.end()};
}

inline bool all_have_oracle(const experiment::RunLog& l) {
    return !l.rounds.empty() &&
           std::all_of(l.rounds.begin(), l.rounds.end(), [](const auto& r) { return r.oracle.has_value(); });
}

/// Win rate of a run: inline baselines when every round has one, otherwise
/// the matching static NoRewrite run (same seed and dataset) if present.
inline std::optional<double> run_win_rate(const experiment::RunLog& l, const std::vector<experiment::RunLog>& all) {
    if (l.rounds.empty()) return std::nullopt;
    const auto logs = plain(l);
    if (std::all_of(logs.begin(), logs.end(), [](const auto& r) { return r.baseline.has_value(); }))
        return metrics::win_rate_inline(logs).win;
    for (const auto& other : all) {
        if (other.header.label != "static:NoRewrite" || other.header.seed != l.header.seed ||
            other.header.dataset != l.header.dataset)
            continue;
        if (!other.errors.empty() || !l.errors.empty()) return std::nullopt;
        return metrics::win_rate(logs, plain(other)).win;
    }
    return std::nullopt;
}

inline std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
    if (xs.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto& x : xs) {
        if (!x) return std::nullopt;
        s += *x;
    }
    return s / static_cast<double>(xs.size());
}

struct CsvFile {
    std::string name;
    std::string body;
};

inline CsvFile policy_performance(const std::vector<Group>& groups, const std::vector<experiment::RunLog>& all) {
    std::string out =
        "policy,dataset,runs,rounds,failures,r_adj,cumulative_reward,cumulative_regret,mean_step_regret,win_rate,"
        "accuracy\n";
    for (const auto& g : groups) {
        std::vector<std::optional<double>> radj, cr, reg, step, win, acc;
        double rounds = 0.0, failures = 0.0;
        for (const auto* l : g.runs) {
            const auto s = experiment::summarize(*l, g.arms);
            rounds += static_cast<double>(s.rounds);
            failures += static_cast<double>(s.failures);
            radj.push_back(s.r_adj);
            cr.push_back(s.cumulative_reward);
            reg.push_back(s.cumulative_regret);
            step.push_back(s.mean_step_regret);
            win.push_back(run_win_rate(*l, all));
            acc.push_back(s.accuracy);
        }
        const double n = static_cast<double>(g.runs.size());
        out += csv_field(g.label) + "," + csv_field(g.dataset) + "," + std::to_string(g.runs.size()) + "," +
               fmt(rounds / n) + "," + fmt(failures / n) + "," + fmt(mean_of(radj)) + "," + fmt(mean_of(cr)) + "," +
               fmt(mean_of(reg)) + "," + fmt(mean_of(step)) + "," + fmt(mean_of(win)) + "," + fmt(mean_of(acc)) + "\n";
    }
    return {"policy_performance.csv", out};
}

inline CsvFile regret_table(const std::vector<Group>& groups) {
    std::string out = "policy,dataset,runs,final_cumulative_regret_mean,final_cumulative_regret_sd,mean_step_regret\n";
    for (const auto& g : groups) {
        std::vector<double> finals;
        double steps = 0.0;
        bool ok = true;
        for (const auto* l : g.runs) {
            if (!all_have_oracle(*l)) {
                ok = false;
                break;
            }
            const double f = metrics::cumulative_regret(plain(*l));
            finals.push_back(f);
            steps += f / static_cast<double>(l->rounds.size());
        }
        if (!ok || finals.empty()) continue;
        const double n = static_cast<double>(finals.size());
        const double m = metrics::mean(finals);
        double ss = 0.0;
        for (double f : finals) ss += (f - m) * (f - m);
        const double sd = finals.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        out += csv_field(g.label) + "," + csv_field(g.dataset) + "," + std::to_string(finals.size()) + "," + fmt(m) +
               "," + fmt(sd) + "," + fmt(steps / n) + "\n";
    }
    return {"regret_table.csv", out};
}

inline CsvFile accuracy_csv(const std::vector<experiment::RunLog>& logs) {
    std::vector<metrics::RoundLog> pooled;
    for (const auto& l : logs)
        for (const auto& r : l.rounds)
            if (r.breakdown) pooled.push_back(r);
    std::string out;
    if (pooled.empty()) return {"accuracy_table.csv", "dataset\n"};
    const auto t = metrics::accuracy_table(metrics::accuracy_by_dataset(pooled));
    out = "dataset";
    for (const auto& p : t.policies) out += "," + csv_field(p);
    out += "\n";
    for (std::size_t d = 0; d < t.datasets.size(); ++d) {
        out += csv_field(t.datasets[d]);
        for (const auto& c : t.accuracy[d]) out += "," + fmt(c);
        out += "\n";
    }
    out += "wins";
    for (double w : t.wins) out += "," + fmt(w);
    out += "\nmacro_avg";
    for (const auto& m : t.macro) out += "," + fmt(m);
    out += "\n";
    return {"accuracy_table.csv", out};
}

/// Cumulative reward and regret per round, averaged pointwise over runs
/// (truncated to the shortest run).
inline CsvFile curves(const std::vector<Group>& groups) {
    std::string out = "policy,dataset,t,cumulative_reward,cumulative_regret\n";
    for (const auto& g : groups) {
        std::size_t len = SIZE_MAX;
        bool oracle = true;
        for (const auto* l : g.runs) {
            len = std::min(len, l->rounds.size());
            oracle = oracle && all_have_oracle(*l);
        }
        if (len == 0 || len == SIZE_MAX) continue;
        std::vector<double> rew(len, 0.0), reg(len, 0.0);
        for (const auto* l : g.runs) {
            double cr = 0.0, cg = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
                const auto& r = l->rounds[i];
                cr += r.reward;
                rew[i] += cr;
                if (oracle) {
                    cg += *r.oracle - r.reward;
                    reg[i] += cg;
                }
            }
        }
        const double n = static_cast<double>(g.runs.size());
        for (std::size_t i = 0; i < len; ++i)
            out += csv_field(g.label) + "," + csv_field(g.dataset) + "," + std::to_string(i + 1) + "," +
                   fmt(rew[i] / n) + "," + (oracle ? fmt(reg[i] / n) : std::string()) + "\n";
    }
    return {"curves.csv", out};
}

inline std::vector<metrics::RoundLog> pooled_rounds(const Group& g) {
    std::vector<metrics::RoundLog> out;
    for (const auto* l : g.runs) out.insert(out.end(), l->rounds.begin(), l->rounds.end());
    return out;
}

inline CsvFile arm_frequency_csv(const std::vector<Group>& groups) {
    std::string out = "policy,dataset,arm,arm_name,frequency\n";
    for (const auto& g : groups) {
        const auto f = metrics::arm_frequencies(pooled_rounds(g), g.arms);
        for (std::size_t a = 0; a < g.arms; ++a)
            out += csv_field(g.label) + "," + csv_field(g.dataset) + "," + std::to_string(a) + "," +
                   g.runs.front()->header.arms[a] + "," + fmt(f[a]) + "\n";
    }
    return {"arm_frequencies.csv", out};
}

inline CsvFile arm_feature_csv(const std::string& name, const std::vector<Group>& groups,
                               metrics::CellMatrix (*fn)(std::span<const metrics::RoundLog>, std::size_t)) {
    std::string out = "policy,dataset,arm,arm_name,feature,value\n";
    for (const auto& g : groups) {
        const auto m = fn(pooled_rounds(g), g.arms);
        for (std::size_t a = 0; a < g.arms; ++a)
            for (std::size_t i = 0; i < kNumFeatures; ++i)
                out += csv_field(g.label) + "," + csv_field(g.dataset) + "," + std::to_string(a) + "," +
                       g.runs.front()->header.arms[a] + "," + std::string(kFeatureSchema[i].name) + "," +
                       fmt(m[a][i]) + "\n";
    }
    return {name, out};
}

inline metrics::CellMatrix kl_default(std::span<const metrics::RoundLog> logs, std::size_t arms) {
    return metrics::inter_arm_context_kl(logs, arms);
}

inline CsvFile kl_csv(const std::vector<Group>& groups) {
    std::string out = "policy,dataset,arm_a,arm_b,symmetric_kl\n";
    for (const auto& g : groups) {
        const auto m = kl_default(pooled_rounds(g), g.arms);
        const auto& names = g.runs.front()->header.arms;
        for (std::size_t a = 0; a < g.arms; ++a)
            for (std::size_t b = 0; b < g.arms; ++b)
                out += csv_field(g.label) + "," + csv_field(g.dataset) + "," + names[a] + "," + names[b] + "," +
                       fmt(m[a][b]) + "\n";
    }
    return {"context_kl.csv", out};
}

/// Per-arm weights of contextual policies, rebuilt by replaying each run
/// and averaged over runs.
inline CsvFile theta_csv(const std::vector<Group>& groups) {
    std::string out = "policy,dataset,arm,arm_name,feature,weight\n";
    for (const auto& g : groups) {
        const auto& h = g.runs.front()->header;
        if (h.static_arm || !bandit::is_contextual(h.policy.name)) continue;
        std::optional<metrics::ThetaTable> acc;
        for (const auto* l : g.runs) {
            const auto t = metrics::theta_table(experiment::replay_policy(*l));
            if (!acc) {
                acc = t;
                continue;
            }
            for (std::size_t a = 0; a < t.rows.size(); ++a)
                for (std::size_t j = 0; j < t.rows[a].size(); ++j) acc->rows[a][j] += t.rows[a][j];
        }
        const double n = static_cast<double>(g.runs.size());
        for (std::size_t a = 0; a < acc->rows.size(); ++a)
            for (std::size_t j = 0; j < acc->columns.size(); ++j)
                out += csv_field(g.label) + "," + csv_field(g.dataset) + "," + std::to_string(a) + "," + h.arms[a] +
                       "," + acc->columns[j] + "," + fmt(acc->rows[a][j] / n) + "\n";
    }
    return {"theta.csv", out};
}

inline std::vector<CsvFile> build_report(const std::vector<experiment::RunLog>& logs) {
    const auto groups = group_runs(logs);
    return {policy_performance(groups, logs),
            regret_table(groups),
            accuracy_csv(logs),
            curves(groups),
            arm_frequency_csv(groups),
            arm_feature_csv("feature_uplift.csv", groups, &metrics::feature_uplift),
            arm_feature_csv("feature_variance.csv", groups, &metrics::feature_variance_by_arm),
            kl_csv(groups),
            theta_csv(groups)};
}

/// Reads every round log in `run_dir` and writes the CSVs into `out_dir`.
/// Returns the written paths.
inline std::vector<std::filesystem::path> report_bundle(const std::filesystem::path& run_dir,
                                                        const std::filesystem::path& out_dir) {
    const auto logs = load_run_dir(run_dir);
    const auto files = build_report(logs);
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    for (const auto& f : files) {
        const auto p = out_dir / f.name;
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + p.string() + "'");
        out << f.body;
        written.push_back(p);
    }
    return written;
}

} // namespace rlab::report
