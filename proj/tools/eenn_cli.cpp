#include <iostream>

#include <CLI11.hpp>

#include "eenn/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Sequential early-exit training with EWC / LwF regularization"};
    app.require_subcommand(1);

    eenn::CliOptions options;
    std::uint64_t seed = 0;
    std::string out;
    std::string checkpoint;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", options.config, "Run configuration (JSON)")->required();
        cmd->add_option("--seed", seed, "Override the config seed");
        cmd->add_option("--out", out, "Output directory (must not already hold a run)");
    };
    CLI::App* train = app.add_subcommand("train", "Train one regime (or a lambda/rho grid)");
    CLI::App* evaluate = app.add_subcommand("evaluate", "Budget and threshold analysis of a checkpoint");
    CLI::App* compare = app.add_subcommand("compare", "Train all six regimes and merge the budget table");
    CLI::App* fisher = app.add_subcommand("fisher-dump", "Write per-exit Fisher values as CSV");
    for (CLI::App* cmd : {train, evaluate, compare, fisher}) add_common(cmd);
    for (CLI::App* cmd : {evaluate, fisher}) cmd->add_option("--checkpoint", checkpoint, "Checkpoint JSON");

    CLI11_PARSE(app, argc, argv);

    CLI::App* chosen = app.get_subcommands().front();
    if (chosen->count("--seed")) options.seed = seed;
    if (chosen->count("--out")) options.out = out;
    if (!checkpoint.empty()) options.checkpoint = checkpoint;
    return eenn::run_command(chosen->get_name(), options, std::cerr);
}
