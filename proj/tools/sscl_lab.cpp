// sscl-lab: generate task streams, run USP experiments and ablation grids.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "sscl/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised continual learning lab"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string level = "info";
    app.add_option("--log-level", level, "trace, debug, info, warn, error")->capture_default_str();

    sscl::CommandOptions opts;
    std::string out, seeds, variant, grid;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config, "experiment config (INI)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output directory");
    };

    auto* gen = app.add_subcommand("gen-stream", "write a task stream to disk");
    common(gen);
    gen->add_flag("--force", opts.force, "overwrite a non-empty output directory");
    gen->add_option("--variant", variant, "standard, imbalanced or inconsistent");

    auto* run = app.add_subcommand("run", "train over the stream once per seed");
    common(run);
    run->add_option("--seeds", seeds, "comma-separated seeds, overriding the config");

    auto* ablate = app.add_subcommand("ablate", "run every grid cell for every seed");
    common(ablate);
    ablate->add_option("--seeds", seeds, "comma-separated seeds, overriding the config");
    ablate->add_option("--grid", grid, "comma-separated cell names, overriding the config");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(level));

    try {
        if (!out.empty()) opts.out = out;
        if (!seeds.empty()) opts.seeds = sscl::parse_seed_list(seeds);
        if (!variant.empty()) opts.variant = variant;
        if (!grid.empty()) opts.grid = sscl::split_list(grid);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }

    if (*gen) return sscl::cmd_gen_stream(opts);
    if (*run) return sscl::cmd_run(opts);
    return sscl::cmd_ablate(opts);
}
