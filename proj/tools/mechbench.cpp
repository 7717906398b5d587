// Command-line front end: generate datasets, train models, evaluate rollouts,
// and run the full benchmark grid.
#include <cstdio>
#include <exception>
#include <fstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mechbench/bench.hpp"

namespace {

mech::ExperimentConfig resolve_config(const std::string& preset,
                                      const std::string& config_path,
                                      std::uint64_t seed) {
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) throw std::invalid_argument("cannot open config file: " + config_path);
        nlohmann::json j;
        f >> j;
        mech::ExperimentConfig cfg = j.get<mech::ExperimentConfig>();
        cfg.seed = seed;
        cfg.validate();
        return cfg;
    }
    if (preset.empty())
        throw std::invalid_argument("either --preset or --config is required");
    return mech::find_preset(preset, seed);
}

void print_seed(const mech::ExperimentConfig& cfg) {
    std::printf("preset %s, seed %llu\n", cfg.preset.c_str(),
                static_cast<unsigned long long>(cfg.seed));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mechbench: physics-informed model benchmarks on analytic systems"};
    app.require_subcommand(1);

    std::string preset, config_path, out_dir = "out", filter, dump_name;
    std::uint64_t seed = 2024;
    bool list_only = false;

    auto add_common = [&](CLI::App* sub, bool with_preset) {
        if (with_preset) {
            sub->add_option("--preset", preset, "preset name (see `presets list`)");
            sub->add_option("--config", config_path, "experiment config JSON file");
        }
        sub->add_option("--seed", seed, "master random seed");
        sub->add_option("--out", out_dir, "output directory");
    };

    auto* gen = app.add_subcommand("generate", "generate a dataset and write CSVs");
    add_common(gen, true);
    auto* train = app.add_subcommand("train", "generate data and train a model");
    add_common(train, true);
    auto* eval = app.add_subcommand("evaluate", "evaluate a saved checkpoint");
    std::string ckpt_path;
    eval->add_option("--checkpoint", ckpt_path, "checkpoint JSON file")->required();
    eval->add_option("--out", out_dir, "output directory");
    auto* bench = app.add_subcommand("benchmark", "run presets and tabulate metrics");
    bench->add_option("--system", filter, "restrict to one system");
    bench->add_option("--preset", filter, "restrict to one preset");
    add_common(bench, false);
    auto* pres = app.add_subcommand("presets", "list or dump built-in presets");
    pres->add_flag("--list", list_only, "list preset names");
    pres->add_option("name", dump_name, "preset to dump as JSON");
    pres->add_option("--seed", seed, "master random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors exit 1
    }

    try {
        if (gen->parsed()) {
            auto cfg = resolve_config(preset, config_path, seed);
            print_seed(cfg);
            auto data = mech::generate_data(cfg);
            std::string dir = out_dir + "/" + cfg.preset;
            mech::write_data(cfg, data, dir);
            std::printf("wrote %s/{train.csv,test.csv,manifest.json}\n", dir.c_str());
        } else if (train->parsed()) {
            auto cfg = resolve_config(preset, config_path, seed);
            print_seed(cfg);
            auto ev = mech::run_preset(cfg, out_dir);
            (void)ev;
        } else if (eval->parsed()) {
            auto ck = mech::load_checkpoint(ckpt_path);
            print_seed(ck.config);
            auto data = mech::generate_data(ck.config);
            auto ev = mech::evaluate_checkpoint(ck, data);
            std::string dir = out_dir + "/" + ck.config.preset;
            std::filesystem::create_directories(dir);
            mech::write_metrics_json(ck.config, ev, dir + "/metrics.json");
            mech::write_eval_csvs(ck.config, ev, dir);
            std::printf("mse %.17g mae %.17g rmse %.17g std %.17g var %.17g (%d failures)\n",
                        ev.metrics.mse, ev.metrics.mae, ev.metrics.rmse, ev.metrics.std_,
                        ev.metrics.var, ev.n_failures);
        } else if (bench->parsed()) {
            std::printf("benchmark seed %llu, filter '%s'\n",
                        static_cast<unsigned long long>(seed), filter.c_str());
            std::filesystem::create_directories(out_dir);
            auto rows = mech::run_benchmark(filter, out_dir, seed);
            mech::write_benchmark_tables(rows, out_dir);
            std::ifstream txt(out_dir + "/summary.txt");
            std::printf("%s", std::string(std::istreambuf_iterator<char>(txt), {}).c_str());
        } else if (pres->parsed()) {
            if (!dump_name.empty() && !list_only) {
                auto cfg = mech::find_preset(dump_name, seed);
                nlohmann::json j = cfg;
                std::printf("%s\n", j.dump(2).c_str());
            } else {
                for (const auto& n : mech::preset_names()) std::printf("%s\n", n.c_str());
            }
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        std::fprintf(stderr, "available presets:\n");
        for (const auto& n : mech::preset_names())
            std::fprintf(stderr, "  %s\n", n.c_str());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
