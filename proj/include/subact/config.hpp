#pragma once

// Flat key=value configuration shared by every stage of the pipeline.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "error.hpp"

namespace subact {

class Config {
public:
    Config() = default;

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        Config cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            if (trim(line).empty()) continue;
            try {
                cfg.set_assignment(line);
            } catch (const ConfigError& e) {
                throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
        return cfg;
    }

    // Parses "key=value".
    void set_assignment(std::string_view text) {
        auto eq = text.find('=');
        if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(text) + "'");
        std::string key = trim(text.substr(0, eq));
        std::string value = trim(text.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key in '" + std::string(text) + "'");
        values_[key] = value;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' is not a number: '" + it->second + "'");
        }
    }

    long get_int(const std::string& key, long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        long v = 0;
        const auto& s = it->second;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size())
            throw ConfigError("config key '" + key + "' is not an integer: '" + s + "'");
        return v;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const auto& s = it->second;
        if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
        if (s == "0" || s == "false" || s == "off" || s == "no") return false;
        throw ConfigError("config key '" + key + "' is not a boolean: '" + s + "'");
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static std::string trim(std::string_view s) {
        auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string_view::npos) return {};
        auto e = s.find_last_not_of(" \t\r\n");
        return std::string(s.substr(b, e - b + 1));
    }

    std::map<std::string, std::string> values_;
};

}  // namespace subact
