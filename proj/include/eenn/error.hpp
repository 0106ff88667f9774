#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

namespace eenn {

/// Library-wide exception. `code` is a stable machine-readable tag
/// (e.g. "dimension_error", "schema_error"); `context` carries structured
/// detail that the CLI forwards verbatim in its error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message, nlohmann::json context = nlohmann::json::object())
        : std::runtime_error(message), code_(std::move(code)), context_(std::move(context)) {}

    const std::string& code() const noexcept { return code_; }
    const nlohmann::json& context() const noexcept { return context_; }

    nlohmann::json to_json() const {
        return {{"code", code_}, {"message", what()}, {"context", context_}};
    }

private:
    std::string code_;
    nlohmann::json context_;
};

}  // namespace eenn
