#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "eenn/model.hpp"
#include "eenn/objectives.hpp"

namespace eenn {

/// Shortest decimal string that parses back to the same double
/// (std::to_chars without precision). All CSV numbers use this.
std::string format_double(double value);

/// Versioned JSON checkpoint: architecture plus one entry per parameter in
/// ParamId order, values written with round-trip precision.
inline constexpr int kCheckpointVersion = 1;
nlohmann::json checkpoint_to_json(const ExitNetwork& net);
ExitNetwork checkpoint_from_json(const nlohmann::json& doc);
void save_checkpoint(const ExitNetwork& net, const std::filesystem::path& path);
ExitNetwork load_checkpoint(const std::filesystem::path& path);

/// "param_id,exit,fisher_value", one row per scalar per exit.
void write_fisher_csv(const FisherStore& store, const std::filesystem::path& path);

nlohmann::json architecture_to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& doc);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
std::string read_text(const std::filesystem::path& path);

}  // namespace eenn
