#pragma once

#include <json.hpp>

#include <optional>
#include <stdexcept>
#include <string>

namespace scbr {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char *kConfigEnv = "SCBR_CONFIG";

/// An explicit path wins, then $SCBR_CONFIG, then `fallback`.
std::string config_path(const std::optional<std::string> &explicit_path, const std::string &fallback);

/// Reads a line-delimited JSON config: each non-blank line is an object and
/// later keys override earlier ones. Lines starting with '#' are skipped.
/// Throws ConfigError naming the line.
nlohmann::json load_config(const std::string &path);

/// Same, from text already in memory.
nlohmann::json parse_config(const std::string &text, const std::string &origin = "<config>");

} // namespace scbr
