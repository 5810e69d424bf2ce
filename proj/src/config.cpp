#include "d3ssl/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "d3ssl/error.hpp"

namespace d3ssl::config {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* kind)
{
    const std::string v = trim(value);
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size())
        throw ConfigError("option '" + key + "' expects " + kind + ", got '" + value + "'");
    return out;
}

std::vector<std::string> split(const std::string& value)
{
    std::vector<std::string> parts;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ','))
        parts.push_back(item);
    return parts;
}

} // namespace

KeyValues read_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open config " + path.string());
    KeyValues kv;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text))
    {
        ++line;
        const auto hash = text.find('#');
        if (hash != std::string::npos)
            text.resize(hash);
        text = trim(text);
        if (text.empty())
            continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw ParseError(line, "expected 'key = value'");
        std::string key = trim(text.substr(0, eq));
        if (key.empty())
            throw ParseError(line, "empty key");
        kv.emplace_back(std::move(key), trim(text.substr(eq + 1)));
    }
    return kv;
}

std::string to_text(const KeyValues& kv)
{
    std::string out;
    for (const auto& [k, v] : kv)
        out += k + " = " + v + "\n";
    return out;
}

int parse_int(const std::string& key, const std::string& value)
{
    return parse_number<int>(key, value, "an integer");
}

long parse_long(const std::string& key, const std::string& value)
{
    return parse_number<long>(key, value, "an integer");
}

double parse_double(const std::string& key, const std::string& value)
{
    return parse_number<double>(key, value, "a number");
}

bool parse_bool(const std::string& key, const std::string& value)
{
    const std::string v = trim(value);
    if (v == "true" || v == "1" || v == "yes" || v == "on")
        return true;
    if (v == "false" || v == "0" || v == "no" || v == "off")
        return false;
    throw ConfigError("option '" + key + "' expects a boolean, got '" + value + "'");
}

std::vector<double> parse_doubles(const std::string& key, const std::string& value)
{
    std::vector<double> out;
    for (const auto& p : split(value))
        out.push_back(parse_double(key, p));
    return out;
}

std::vector<int> parse_ints(const std::string& key, const std::string& value)
{
    std::vector<int> out;
    for (const auto& p : split(value))
        out.push_back(parse_int(key, p));
    return out;
}

std::string format_double(double v)
{
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string join(const std::vector<double>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out += (i ? "," : "") + format_double(v[i]);
    return out;
}

std::string join(const std::vector<int>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

} // namespace d3ssl::config
