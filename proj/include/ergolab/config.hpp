#pragma once

// Experiment configuration: a small sectioned key = value text format with a
// published schema. Files are diff-able experiment records; every recognized
// key has a typed default so a config only states what it overrides.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ergolab/common.hpp"
#include "ergolab/linalg.hpp"

namespace ergolab {

struct SchemaEntry {
    std::string section, key, type, default_value, description;
};

// The full table of recognized sections and keys.
const std::vector<SchemaEntry>& config_schema();

// JSON rendering of the schema (stable key order), printed by `ergolab schema`.
std::string schema_json();

class Config {
  public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text, const std::string& origin = "<memory>");

    // Rejects keys and sections absent from the schema.
    void validate() const;

    bool has(const std::string& section, const std::string& key) const;
    std::string get_string(const std::string& section, const std::string& key) const;
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    int get_int(const std::string& section, const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    Vec get_double_list(const std::string& section, const std::string& key,
                        const Vec& fallback) const;
    std::vector<std::string> get_string_list(const std::string& section, const std::string& key,
                                             const std::vector<std::string>& fallback) const;

    void set(const std::string& section, const std::string& key, const std::string& value);

    // Sorted section -> key -> raw value view, used to embed the resolved
    // configuration into the run manifest.
    const std::map<std::string, std::map<std::string, std::string>>& data() const {
        return data_;
    }

    // Canonical text round-trip (sorted sections and keys).
    std::string to_text() const;

  private:
    std::map<std::string, std::map<std::string, std::string>> data_;
    std::string origin_ = "<memory>";
    std::map<std::string, std::map<std::string, int>> lines_;
};

}  // namespace ergolab
