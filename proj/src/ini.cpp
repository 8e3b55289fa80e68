#include "sscl/ini.hpp"

#include <fstream>
#include <sstream>

namespace sscl {

ConfigError::ConfigError(const std::string& msg, int l)
    : std::runtime_error(l > 0 ? "line " + std::to_string(l) + ": " + msg : msg), line(l) {}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) pos = s.size();
        auto item = trim(s.substr(start, pos - start));
        if (!item.empty()) out.push_back(std::move(item));
        start = pos + 1;
    }
    return out;
}

namespace {

template <class T, class Fn>
T parse_with(const IniEntry& e, const char* kind, Fn fn) {
    try {
        std::size_t pos = 0;
        T v = fn(e.value, &pos);
        if (pos != e.value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + e.key + "': expected " + kind + ", got '" + e.value + "'", e.line);
    }
}

}  // namespace

std::size_t parse_count(const IniEntry& e) {
    if (!e.value.empty() && e.value.front() == '-')
        throw ConfigError("key '" + e.key + "': expected a non-negative count, got '" + e.value + "'", e.line);
    return parse_with<std::size_t>(e, "a non-negative count",
                                   [](const std::string& s, std::size_t* p) { return std::stoull(s, p); });
}

double parse_real(const IniEntry& e) {
    return parse_with<double>(e, "a real number", [](const std::string& s, std::size_t* p) { return std::stod(s, p); });
}

std::int64_t parse_integer(const IniEntry& e) {
    return parse_with<std::int64_t>(e, "an integer",
                                    [](const std::string& s, std::size_t* p) { return std::stoll(s, p); });
}

bool parse_bool(const IniEntry& e) {
    if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
    if (e.value == "false" || e.value == "0" || e.value == "no") return false;
    throw ConfigError("key '" + e.key + "': expected true/false, got '" + e.value + "'", e.line);
}

IniDocument IniDocument::parse(const std::string& text) {
    IniDocument doc;
    std::istringstream in(text);
    std::string raw, section;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        auto hash = raw.find_first_of("#;");
        std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError("unterminated section header", line);
            section = trim(std::string_view(s).substr(1, s.size() - 2));
            if (section.empty()) throw ConfigError("empty section name", line);
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + s + "'", line);
        std::string key = trim(std::string_view(s).substr(0, eq));
        if (key.empty()) throw ConfigError("missing key before '='", line);
        if (doc.find(section, key))
            throw ConfigError("duplicate key '" + key + "' in [" + section + "]", line);
        doc.entries_.push_back({section, key, trim(std::string_view(s).substr(eq + 1)), line});
    }
    return doc;
}

IniDocument IniDocument::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const IniEntry* IniDocument::find(const std::string& sec, const std::string& key) const {
    for (const auto& e : entries_)
        if (e.section == sec && e.key == key) return &e;
    return nullptr;
}

std::vector<const IniEntry*> IniDocument::section(const std::string& name) const {
    std::vector<const IniEntry*> out;
    for (const auto& e : entries_)
        if (e.section == name) out.push_back(&e);
    return out;
}

}  // namespace sscl
