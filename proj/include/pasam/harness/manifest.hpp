#pragma once

#include <chrono>
#include <ctime>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "pasam/harness/config.hpp"

#ifndef PASAM_GIT_DESCRIBE
#define PASAM_GIT_DESCRIBE "unknown"
#endif

namespace pasam::harness {

/// Ordered key=value record of one run. The `config.` keys are a full
/// RunConfig snapshot.
struct RunManifest {
    std::vector<std::pair<std::string, std::string>> entries;

    void set(const std::string& key, const std::string& value) {
        for (auto& [k, v] : entries)
            if (k == key) {
                v = value;
                return;
            }
        entries.emplace_back(key, value);
    }

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return &v;
        return nullptr;
    }

    std::string get(const std::string& key) const {
        if (const auto* v = find(key)) return *v;
        throw ConfigError("manifest has no key '" + key + "'");
    }

    void set_config(const RunConfig& cfg) {
        std::istringstream in(to_config_text(cfg));
        std::string line;
        while (std::getline(in, line)) {
            const auto eq = line.find('=');
            set("config." + line.substr(0, eq), line.substr(eq + 1));
        }
    }

    RunConfig config() const {
        RunConfig cfg;
        for (const auto& [k, v] : entries)
            if (k.rfind("config.", 0) == 0) set_value(cfg, k.substr(7), v);
        return cfg;
    }
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline RunManifest new_manifest(const std::string& command) {
    RunManifest m;
    m.set("command", command);
    m.set("git_describe", PASAM_GIT_DESCRIBE);
    m.set("started", utc_timestamp());
    return m;
}

inline void write_manifest(const std::string& path, const RunManifest& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path);
    for (const auto& [k, v] : m.entries) out << k << "=" << v << "\n";
    if (!out) throw IoError("cannot write manifest " + path);
}

inline RunManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read manifest " + path);
    RunManifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        m.set(line.substr(0, eq), line.substr(eq + 1));
    }
    try {
        (void)m.config();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return m;
}

}  // namespace pasam::harness
