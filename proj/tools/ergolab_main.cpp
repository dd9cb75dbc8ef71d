// Command-line front end: run pipeline stages on a registered scenario,
// print the config schema, or list scenarios. Exit codes: 0 success,
// 2 assumption-check failure, 3 solver/reproducibility failure, 4 bad input.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ergolab/pipeline.hpp"
#include "ergolab/report.hpp"
#include "ergolab/scenarios.hpp"

int main(int argc, char** argv) {
    CLI::App app{"ergolab: a numerical laboratory for ergodic stochastic control"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "execute pipeline stages on a scenario");
    std::string config_path, stages_csv, out_dir, replay_path;
    std::uint64_t seed = 0;
    int threads = 0;
    run->add_option("config", config_path, "experiment config file (key = value sections)");
    auto* stages_opt =
        run->add_option("--stages", stages_csv, "comma-separated stages (overrides the config)");
    auto* seed_opt = run->add_option("--seed", seed, "top-level seed (overrides the config)");
    auto* threads_opt =
        run->add_option("--threads", threads, "worker cap; 0 = hardware (results unaffected)");
    auto* out_opt =
        run->add_option("--out", out_dir, "output root (overrides the config and ERGOLAB_OUT)");
    auto* replay_opt = run->add_option(
        "--replay", replay_path, "re-run a recorded manifest and verify outputs byte-for-byte");

    auto* schema_cmd = app.add_subcommand("schema", "print the config schema as JSON");
    auto* scen_cmd = app.add_subcommand("scenarios", "list registered scenarios");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 4;
    }

    try {
        if (schema_cmd->parsed()) {
            std::cout << ergolab::schema_json();
            return 0;
        }
        if (scen_cmd->parsed()) {
            for (const std::string& name : ergolab::scenario_names()) {
                const ergolab::Scenario sc = ergolab::make_scenario(name);
                std::cout << name << ": " << sc.notes << "\n";
            }
            return 0;
        }
        if (replay_opt->count() > 0) {
            if (!config_path.empty() || stages_opt->count() || seed_opt->count() ||
                out_opt->count())
                throw ergolab::ConfigError(
                    "--replay re-runs the recorded manifest; it cannot be combined with a "
                    "config file, --stages, --seed, or --out");
            const ergolab::RunResult rr = ergolab::replay_manifest(replay_path);
            std::cout << rr.summary;
            return 0;
        }
        if (config_path.empty())
            throw ergolab::ConfigError("missing config file (or use --replay <manifest.json>)");
        ergolab::Config cfg = ergolab::Config::parse_file(config_path);
        if (stages_opt->count()) cfg.set("run", "stages", stages_csv);
        if (seed_opt->count()) cfg.set("run", "seed", std::to_string(seed));
        if (threads_opt->count()) cfg.set("run", "threads", std::to_string(threads));
        if (out_opt->count()) cfg.set("run", "out", out_dir);
        const ergolab::RunResult rr = ergolab::run_pipeline(cfg);
        std::cout << rr.summary << "bundle: " << rr.bundle_dir << "\n";
        return 0;
    } catch (const ergolab::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const ergolab::AssumptionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
