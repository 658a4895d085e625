#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "auditor/types.hpp"

namespace auditor::config {

using nlohmann::json;

/// Throws ConfigError unless `j` is an object whose keys are all in `allowed`.
inline void check_object(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (auto a : allowed) known = known || a == key;
        if (!known) throw ConfigError("unknown key " + std::string(where) + "." + key);
    }
}

/// Reads j[key] into `out` when present; type mismatches become ConfigError.
template <typename T>
void read(const json& j, std::string_view where, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string(where) + "." + key + ": " + e.what());
    }
}

}  // namespace auditor::config
