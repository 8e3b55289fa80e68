#pragma once

// Minimal `key = value` reader with `[section]` headers. Keeps the source line
// of every entry so validation errors can point back into the file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sscl {

struct ConfigError : std::runtime_error {
    ConfigError(const std::string& msg, int line = 0);
    int line;
};

struct IniEntry {
    std::string section;
    std::string key;
    std::string value;
    int line = 0;
};

class IniDocument {
public:
    static IniDocument parse(const std::string& text);
    static IniDocument load(const std::filesystem::path& path);

    const std::vector<IniEntry>& entries() const { return entries_; }
    const IniEntry* find(const std::string& section, const std::string& key) const;
    std::vector<const IniEntry*> section(const std::string& name) const;

private:
    std::vector<IniEntry> entries_;
};

std::string trim(std::string_view s);

// Typed accessors; failures throw ConfigError anchored at the entry's line.
std::size_t parse_count(const IniEntry& e);
double parse_real(const IniEntry& e);
std::int64_t parse_integer(const IniEntry& e);
bool parse_bool(const IniEntry& e);
std::vector<std::string> split_list(std::string_view s, char sep = ',');

}  // namespace sscl
