#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "eenn/dataset.hpp"
#include "eenn/evaluator.hpp"
#include "eenn/model.hpp"
#include "eenn/trainer.hpp"

namespace eenn {

struct DataConfig {
    /// "synthetic" or "csv".
    std::string source = "synthetic";
    std::string csv_path;
    SynthSpec synthetic;
    double test_fraction = 0.25;
    bool operator==(const DataConfig&) const = default;
};

struct EvalConfig {
    std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<double> budgets{0.25, 0.5, 0.75, 1.0};
    Confidence confidence = Confidence::MaxProbability;
    std::string checkpoint;
    bool operator==(const EvalConfig&) const = default;
};

/// Whole-run configuration. One JSON document; see docs/config.md.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "runs";
    Architecture model{32, 8, {24, 32, 40, 48}, 1};
    DataConfig data;
    TrainConfig train;
    /// When non-empty, `train` runs once per value (Table-style sweeps).
    std::vector<double> lambda_grid;
    std::vector<double> rho_grid;
    EvalConfig evaluator;

    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

/// Strict parse: unknown keys anywhere are a schema_error; absent keys keep defaults.
RunConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::filesystem::path& path);

std::string_view to_string(Confidence c) noexcept;
Confidence parse_confidence(std::string_view text);

/// Dataset for a config: synthetic or CSV, with test/val splits assigned from
/// the run seed.
Dataset build_dataset(const RunConfig& cfg);

}  // namespace eenn
