#include "scbr/config.hpp"

#include <fmt/format.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace scbr {

std::string config_path(const std::optional<std::string> &explicit_path, const std::string &fallback) {
    if (explicit_path && !explicit_path->empty()) return *explicit_path;
    if (const char *env = std::getenv(kConfigEnv); env != nullptr && *env != '\0') return env;
    return fallback;
}

nlohmann::json parse_config(const std::string &text, const std::string &origin) {
    auto merged = nlohmann::json::object();
    std::istringstream in(text);
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error &e) {
            throw ConfigError(fmt::format("{}:{}: {}", origin, lineno, e.what()));
        }
        if (!obj.is_object()) throw ConfigError(fmt::format("{}:{}: expected a JSON object", origin, lineno));
        merged.update(obj);
    }
    return merged;
}

nlohmann::json load_config(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path));
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), path);
}

} // namespace scbr
