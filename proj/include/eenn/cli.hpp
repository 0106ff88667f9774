#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "eenn/config.hpp"
#include "eenn/evaluator.hpp"
#include "eenn/model.hpp"
#include "eenn/trainer.hpp"

namespace eenn {

struct CliOptions {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    std::optional<std::filesystem::path> checkpoint;
};

/// Config file plus CLI overrides (--seed, --out, --checkpoint).
RunConfig resolve_config(const CliOptions& options);

/// A trained model with everything the artifact writers need.
struct RegimeRun {
    std::string label;
    TrainConfig train;
    ExitNetwork net;
    RunResult result;
    BudgetReport budget;
};

/// Trains one regime from a fresh network initialised from the run seed.
RegimeRun train_regime(const RunConfig& cfg, const TrainingData& data, const TrainConfig& train, std::string label);

/// Writes checkpoint.json, stages.csv, stage_*.json, summary.json,
/// budget_table.csv, exit_ratios.csv, budget_curve.csv, flops.csv and (EWC)
/// fisher.csv into `dir`.
void write_run_artifacts(const RegimeRun& run, const std::filesystem::path& dir);

/// Run label used for directory names and budget-table rows.
std::string run_label(const TrainConfig& train);

/// Creates a fresh run directory; refuses to touch an existing non-empty one.
void create_run_dir(const std::filesystem::path& dir);

int cli_train(const CliOptions& options);
int cli_evaluate(const CliOptions& options);
int cli_compare(const CliOptions& options);
int cli_fisher_dump(const CliOptions& options);

/// Runs a command by name, turning eenn::Error into the error JSON
/// {code, message, context} on `err` and a nonzero exit code.
int run_command(const std::string& command, const CliOptions& options, std::ostream& err);

}  // namespace eenn
