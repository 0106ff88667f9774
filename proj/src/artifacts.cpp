#include "eenn/artifacts.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "eenn/error.hpp"

namespace eenn {

namespace {

void require_keys(const nlohmann::json& doc, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!doc.is_object()) throw Error("schema_error", where + " must be an object");
    std::set<std::string> names(allowed.begin(), allowed.end());
    for (const auto& [key, value] : doc.items()) {
        if (!names.contains(key)) {
            throw Error("schema_error", "unknown key '" + key + "' in " + where, {{"key", key}, {"where", where}});
        }
    }
    for (const auto& name : names) {
        if (!doc.contains(name)) {
            throw Error("schema_error", "missing key '" + name + "' in " + where, {{"key", name}, {"where", where}});
        }
    }
}

}  // namespace

std::string format_double(double value) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc{}) throw Error("io_error", "cannot format double");
    return std::string(buf.data(), ptr);
}

nlohmann::json architecture_to_json(const Architecture& arch) {
    return {{"input_dim", arch.input_dim},
            {"classes", arch.classes},
            {"widths", arch.widths},
            {"layers_per_segment", arch.layers_per_segment}};
}

Architecture architecture_from_json(const nlohmann::json& doc) {
    require_keys(doc, {"input_dim", "classes", "widths", "layers_per_segment"}, "model");
    Architecture arch;
    try {
        arch.input_dim = doc.at("input_dim").get<std::size_t>();
        arch.classes = doc.at("classes").get<std::size_t>();
        arch.widths = doc.at("widths").get<std::vector<std::size_t>>();
        arch.layers_per_segment = doc.at("layers_per_segment").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("schema_error", std::string("model: ") + e.what());
    }
    arch.validate();
    return arch;
}

nlohmann::json checkpoint_to_json(const ExitNetwork& net) {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& [id, tensor] : net.params()) {
        params.push_back({{"id", id.str()},
                          {"shape", tensor.shape()},
                          {"data", std::vector<double>(tensor.data().begin(), tensor.data().end())}});
    }
    return {{"format", "eenn-checkpoint"},
            {"version", kCheckpointVersion},
            {"architecture", architecture_to_json(net.arch())},
            {"params", std::move(params)}};
}

ExitNetwork checkpoint_from_json(const nlohmann::json& doc) {
    require_keys(doc, {"format", "version", "architecture", "params"}, "checkpoint");
    if (doc.at("format") != "eenn-checkpoint") throw Error("schema_error", "not an eenn checkpoint");
    if (doc.at("version") != kCheckpointVersion) {
        throw Error("schema_error", "unsupported checkpoint version", {{"version", doc.at("version")}});
    }
    Architecture arch = architecture_from_json(doc.at("architecture"));
    std::map<ParamId, Tensor> params;
    for (const auto& entry : doc.at("params")) {
        require_keys(entry, {"id", "shape", "data"}, "checkpoint parameter");
        try {
            const ParamId id = ParamId::parse(entry.at("id").get<std::string>());
            params.emplace(id, Tensor(entry.at("shape").get<Shape>(), entry.at("data").get<std::vector<double>>()));
        } catch (const nlohmann::json::exception& e) {
            throw Error("schema_error", std::string("checkpoint parameter: ") + e.what());
        }
    }
    return ExitNetwork::from_params(std::move(arch), std::move(params));
}

void save_checkpoint(const ExitNetwork& net, const std::filesystem::path& path) {
    write_json(path, checkpoint_to_json(net));
}

ExitNetwork load_checkpoint(const std::filesystem::path& path) {
    try {
        return checkpoint_from_json(nlohmann::json::parse(read_text(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("schema_error", std::string("checkpoint is not valid JSON: ") + e.what(), {{"path", path.string()}});
    }
}

void write_fisher_csv(const FisherStore& store, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "param_id,exit,fisher_value\n";
    for (const auto& [exit, values] : store.exits()) {
        for (const auto& [id, tensor] : values) {
            for (std::size_t k = 0; k < tensor.size(); ++k) {
                out << ScalarId{id, k}.str() << ',' << exit << ',' << format_double(tensor[k]) << '\n';
            }
        }
    }
    write_text(path, out.str());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io_error", "cannot write " + path.string(), {{"path", path.string()}});
    out << text;
    if (!out) throw Error("io_error", "write failed for " + path.string(), {{"path", path.string()}});
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io_error", "cannot open " + path.string(), {{"path", path.string()}});
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace eenn
