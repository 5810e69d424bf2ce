#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace d3ssl::config {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Plain-text `key = value` lines; `#` starts a comment, blank lines are
// ignored. Throws ParseError naming the line, DataError if unreadable.
KeyValues read_file(const std::filesystem::path& path);
std::string to_text(const KeyValues& kv);

// Typed parsing of one option value. Throws ConfigError naming the key.
int parse_int(const std::string& key, const std::string& value);
long parse_long(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
// Comma-separated list, e.g. "0.2,0.5".
std::vector<double> parse_doubles(const std::string& key, const std::string& value);
std::vector<int> parse_ints(const std::string& key, const std::string& value);

std::string format_double(double v); // shortest round-trip form
std::string join(const std::vector<double>& v);
std::string join(const std::vector<int>& v);

} // namespace d3ssl::config
