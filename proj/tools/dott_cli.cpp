#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dott/error.hpp"
#include "dott/experiment.hpp"

// Exit codes: 0 success, 1 verify check failed, 2 invalid config or usage,
// 3 numeric failure during the run.
namespace {

int execute(const std::string& path, const std::string& out, dott::RunOptions opt, bool verify, bool quiet)
{
    const dott::ExperimentConfig cfg = dott::load_config(path);
    if (verify && cfg.checks.empty()) throw dott::InvalidArgument("config: verify needs a \"verify\": {\"checks\": [...]} section");
    if (!quiet) opt.log = &std::cerr;
    const dott::RunResult r = dott::run_experiment(cfg, opt);
    if (!out.empty()) dott::write_artifacts(cfg, r, opt, out);

    if (!r.ok) {
        std::cerr << "numeric failure: " << r.failure << "\n";
        return 3;
    }
    std::printf("experiment %s finished in %.3f s, final ranks %s\n", cfg.experiment.c_str(), r.wall_seconds,
                dott::ranks_json(r.final_ranks).c_str());
    if (!verify) return 0;

    const auto rows = dott::verify_checks(cfg, r);
    std::fputs(dott::verify_table(rows).c_str(), stdout);
    for (const auto& row : rows)
        if (!row.pass) return 1;
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"DO-TT experiment runner"};
    app.require_subcommand(1);

    std::string config, out;
    dott::RunOptions opt;
    bool quiet = false;
    std::string preset;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("config", config, "experiment config (JSON)")->required();
        sub->add_option("--out", out, "artifact directory");
        sub->add_option("--threads", opt.threads, "worker threads for benchmarks")->check(CLI::PositiveNumber);
        sub->add_option("--seed", opt.seed, "recorded in summary.json; runs are deterministic");
        sub->add_flag("-q,--quiet", quiet, "no progress log");
    };
    CLI::App* run = app.add_subcommand("run", "run an experiment and write artifacts");
    add_common(run);
    CLI::App* verify = app.add_subcommand("verify", "run an experiment and check its verify section");
    add_common(verify);
    CLI::App* show = app.add_subcommand("preset", "print a preset config (no name lists them)");
    show->add_option("name", preset);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (show->parsed()) {
            if (preset.empty())
                for (const auto& n : dott::preset_names()) std::cout << n << "\n";
            else
                std::cout << dott::preset_json(preset) << "\n";
            return 0;
        }
        return execute(config, out, opt, verify->parsed(), quiet);
    } catch (const dott::InvalidArgument& e) {
        std::cerr << "invalid config: " << e.what() << "\n";
        return 2;
    } catch (const dott::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    }
}
