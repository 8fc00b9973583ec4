#pragma once

#include <string>

#include <json.hpp>

namespace ccnn {

// Throws io_failure when the file cannot be opened, parse_error on bad JSON.
nlohmann::json read_json_file(const std::string& path);

// Two-space indented dump with a trailing newline.
void write_json_file(const nlohmann::json& j, const std::string& path);
void write_text_file(const std::string& text, const std::string& path);

}  // namespace ccnn
