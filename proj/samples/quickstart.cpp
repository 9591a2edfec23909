// Quickstart: compare policies on a synthetic environment, then run the
// full rewrite pipeline against the synthetic backend.
//
//   quickstart [config.json]

#include <cstdio>
#include <filesystem>

#include "rlab/experiment.hpp"
#include "rlab/metrics.hpp"

using namespace rlab;

int main(int argc, char** argv) {
    std::printf("%-10s %12s %12s\n", "policy", "reward", "regret");
    for (const char* name : {"ts_c", "linucb", "exp3", "ts_nc"}) {
        double reward = 0.0, regret = 0.0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto sim = experiment::simulate(env::context_dependent_spec(seed), {name, {}}, 2000, seed);
            reward += metrics::cumulative_reward(sim.logs) / 5.0;
            regret += metrics::cumulative_regret(sim.logs) / 5.0;
        }
        std::printf("%-10s %12.2f %12.2f\n", name, reward, regret);
    }

    const std::filesystem::path config =
        argc > 1 ? std::filesystem::path(argv[1]) : std::filesystem::path(RLAB_SAMPLES_DIR) / "configs/synthetic_run.json";
    auto c = experiment::load_config(config);
    c.output_dir = std::filesystem::temp_directory_path() / "rlab_quickstart";
    std::filesystem::remove_all(c.output_dir);
    for (const auto& s : experiment::run_experiment(c)) {
        std::printf("%s seed %llu: %llu rounds, reward %.3f, regret %.3f, log %s\n", s.label.c_str(),
                    static_cast<unsigned long long>(s.seed), static_cast<unsigned long long>(s.rounds),
                    s.cumulative_reward, s.cumulative_regret.value_or(0.0), s.log_path.string().c_str());
    }
    return 0;
}
