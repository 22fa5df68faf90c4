#pragma once

#include <map>
#include <string>
#include <vector>

#include "deanet/data.hpp"
#include "deanet/network.hpp"
#include "deanet/train.hpp"

namespace deanet {

/// Flat `section.key = value` text format; '#' starts a comment. Overrides
/// from the command line win over file values.
struct KeyValueConfig {
    std::map<std::string, std::string> values;

    static KeyValueConfig from_file(const std::string& path);

    void set(const std::string& key, const std::string& value) { values[key] = value; }
    /// "key=value" form used by --override.
    void apply_override(const std::string& assignment);

    bool has(const std::string& key) const { return values.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_real(const std::string& key, double fallback) const;
    bool get_flag(const std::string& key, bool fallback) const;
    std::vector<double> get_reals(const std::string& key, std::vector<double> fallback) const;

    /// Sorted `key = value` lines; a snapshot of this reproduces the run.
    std::string dump() const;
};

/// Fully resolved run settings for the CLI.
struct RunConfig {
    DatasetKind dataset = DatasetKind::Glas;
    std::string data_root;
    ModelConfig model;
    TrainConfig train;
    std::string out_dir = "out";
    std::string run_name; // empty -> run-<timestamp>
    bool overwrite = false;

    /// Raw resolved key/value view, dumped next to every run's artifacts.
    KeyValueConfig raw;

    static RunConfig resolve(const KeyValueConfig& kv);
};

/// DEANET_CACHE env var wins over `<data_root>/cache`.
std::string resolve_cache_dir(const RunConfig& cfg);

} // namespace deanet
