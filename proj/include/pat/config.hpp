/*
 * Copyright 2026 The patprune Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pat/errors.hpp"

namespace pat {

/// `key = value` lines. `#` starts a comment, blank lines are ignored, keys
/// are case-sensitive and may contain dots. A repeated key is an error.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(std::string_view text, const std::string& origin = "<config>") {
        KeyValueConfig cfg;
        std::istringstream in{std::string(text)};
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const std::string body = trim(line);
            if (body.empty()) continue;
            const auto eq = body.find('=');
            const std::string where = origin + ":" + std::to_string(lineno);
            if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
            const std::string key = trim(body.substr(0, eq));
            const std::string value = trim(body.substr(eq + 1));
            if (key.empty()) throw ConfigError(where + ": empty key");
            if (cfg.values_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
            cfg.values_[key] = value;
            cfg.origin_[key] = where;
        }
        return cfg;
    }

    static KeyValueConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config file " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path.string());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, std::string value) {
        values_[key] = std::move(value);
        origin_[key] = "<override>";
    }
    const std::map<std::string, std::string>& values() const noexcept { return values_; }

    std::optional<std::string> get(const std::string& key) const {
        used_.insert(key);
        const auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }
    std::string get_or(const std::string& key, std::string fallback) const {
        return get(key).value_or(std::move(fallback));
    }

    template <typename N>
    N number(const std::string& key, N fallback) const {
        const auto v = get(key);
        return v ? to_number<N>(key, *v) : fallback;
    }
    template <typename N>
    std::optional<N> optional_number(const std::string& key) const {
        const auto v = get(key);
        if (!v) return std::nullopt;
        return to_number<N>(key, *v);
    }
    bool flag(const std::string& key, bool fallback) const {
        const auto v = get(key);
        if (!v) return fallback;
        if (*v == "true" || *v == "1" || *v == "yes") return true;
        if (*v == "false" || *v == "0" || *v == "no") return false;
        throw ConfigError(where(key) + ": '" + key + "' expects true/false, got '" + *v + "'");
    }
    /// Comma- or space-separated list of numbers.
    template <typename N>
    std::vector<N> list(const std::string& key, std::vector<N> fallback = {}) const {
        const auto v = get(key);
        if (!v) return fallback;
        std::vector<N> out;
        std::string s = *v;
        for (char& c : s)
            if (c == ',') c = ' ';
        std::istringstream in(s);
        std::string tok;
        while (in >> tok) out.push_back(to_number<N>(key, tok));
        return out;
    }

    /// Keys that were present but never read.
    std::vector<std::string> unused() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) out.push_back(k);
        return out;
    }

private:
    static std::string trim(std::string_view s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string_view::npos) return {};
        const auto b = s.find_last_not_of(" \t\r");
        return std::string(s.substr(a, b - a + 1));
    }

    std::string where(const std::string& key) const {
        const auto it = origin_.find(key);
        return it == origin_.end() ? std::string("<config>") : it->second;
    }

    template <typename N>
    N to_number(const std::string& key, const std::string& text) const {
        N value{};
        const char* end = text.data() + text.size();
        const auto res = std::from_chars(text.data(), end, value);
        if (res.ec != std::errc() || res.ptr != end)
            throw ConfigError(where(key) + ": '" + key + "' expects a number, got '" + text + "'");
        return value;
    }

    std::map<std::string, std::string> values_;
    std::map<std::string, std::string> origin_;
    mutable std::set<std::string> used_;
};

}  // namespace pat
