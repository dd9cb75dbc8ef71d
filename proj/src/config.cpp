#include "ergolab/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace ergolab {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(s);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

const std::vector<SchemaEntry>& config_schema() {
    static const std::vector<SchemaEntry> schema = {
        {"run", "scenario", "string", "",
         "registered scenario name (see `ergolab scenarios`); required"},
        {"run", "stages", "string-list", "all",
         "comma-separated pipeline stages: check, simulate, adjoint, ergodicity, ebsde, smp, all"},
        {"run", "seed", "u64", "7", "top-level seed; every stage derives named sub-streams"},
        {"run", "threads", "int", "0", "worker cap; 0 = hardware concurrency (results unaffected)"},
        {"run", "out", "string", "", "output root; overrides ERGOLAB_OUT"},
        {"check", "n_samples", "int", "4000", "sample count per structural check"},
        {"check", "radius", "double", "3", "half-width of the state sampling box"},
        {"simulate", "horizon", "double", "10", "forward simulation horizon"},
        {"simulate", "dt", "double", "0.01", "forward Euler step"},
        {"simulate", "n_paths", "int", "20000", "forward ensemble size"},
        {"adjoint", "T0", "double", "1", "window kept for evaluation after convergence"},
        {"adjoint", "T_init", "double", "0", "first truncation horizon; 0 = auto from k"},
        {"adjoint", "tol", "double", "0.005", "stopping tolerance on successive Y maps"},
        {"adjoint", "dt", "double", "0.02", "backward time step"},
        {"adjoint", "n_paths", "int", "20000", "regression ensemble size"},
        {"adjoint", "basis_degree", "int", "3", "polynomial feature degree"},
        {"adjoint", "max_solves", "int", "12", "horizon doublings before giving up"},
        {"ergodicity", "t", "double", "1", "time at which gradient and hit checks run"},
        {"ergodicity", "dt", "double", "0.01", "simulation step for this stage"},
        {"ergodicity", "n_paths", "int", "20000", "paths for gradient and hit estimates"},
        {"ergodicity", "n_pairs", "int", "20000", "coupled pairs for the mixing estimate"},
        {"ergodicity", "max_epochs", "int", "10", "coupling epochs before stopping"},
        {"ebsde", "alphas", "double-list", "0.4,0.2,0.1,0.05",
         "discount schedule, decreasing; the last two extrapolate to zero"},
        {"ebsde", "dt", "double", "0.02", "backward step shared by every discount level"},
        {"ebsde", "n_paths", "int", "4096", "regression ensemble size per level"},
        {"ebsde", "fh_horizon", "double", "0", "finite-horizon route length; 0 = auto 20/k"},
        {"ebsde", "lra_horizon", "double", "0", "long-run-average route length; 0 = auto 100/k"},
        {"smp", "challengers", "double-list", "0.2,0.8,1.2",
         "challenger parameters: feedback gains when the scenario is linear-quadratic, "
         "constant control levels otherwise"},
        {"smp", "horizons", "double-list", "2,4,8,16", "transversality checkpoints"},
        {"smp", "n_paths", "int", "4000", "paired paths per transversality curve"},
        {"smp", "cost_horizon", "double", "150", "paired cost-comparison horizon"},
        {"smp", "cost_paths", "int", "2000", "paired cost-comparison paths"},
    };
    return schema;
}

std::string schema_json() {
    std::string out = "{\n  \"sections\": [\n";
    std::string cur;
    bool first_section = true;
    for (std::size_t i = 0; i < config_schema().size(); ++i) {
        const SchemaEntry& e = config_schema()[i];
        if (e.section != cur) {
            if (!cur.empty()) out += "\n      ]\n    },\n";
            else if (!first_section) out += ",\n";
            out += "    {\n      \"name\": \"" + e.section + "\",\n      \"keys\": [\n";
            cur = e.section;
            first_section = false;
        } else {
            out += ",\n";
        }
        out += "        {\"key\": \"" + e.key + "\", \"type\": \"" + e.type +
               "\", \"default\": \"" + e.default_value + "\", \"description\": \"" +
               e.description + "\"}";
    }
    out += "\n      ]\n    }\n  ]\n}\n";
    return out;
}

Config Config::parse_string(const std::string& text, const std::string& origin) {
    Config cfg;
    cfg.origin_ = origin;
    std::stringstream ss(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::size_t hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
            cfg.data_[section];
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected `key = value`, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (section.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": key '" + key + "' appears before any [section]");
        cfg.data_[section][key] = value;
        cfg.lines_[section][key] = lineno;
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
}

void Config::validate() const {
    for (const auto& [section, kv] : data_) {
        bool section_known = false;
        for (const SchemaEntry& e : config_schema())
            if (e.section == section) {
                section_known = true;
                break;
            }
        if (!section_known)
            throw ConfigError(origin_ + ": unknown section [" + section +
                              "]; run `ergolab schema` for the recognized layout");
        for (const auto& [key, value] : kv) {
            (void)value;
            bool known = false;
            for (const SchemaEntry& e : config_schema())
                if (e.section == section && e.key == key) {
                    known = true;
                    break;
                }
            if (!known) {
                int lineno = 0;
                const auto sit = lines_.find(section);
                if (sit != lines_.end()) {
                    const auto kit = sit->second.find(key);
                    if (kit != sit->second.end()) lineno = kit->second;
                }
                throw ConfigError(origin_ + ":" + std::to_string(lineno) + ": unknown key '" +
                                  key + "' in section [" + section +
                                  "]; run `ergolab schema` for the recognized layout");
            }
        }
    }
}

bool Config::has(const std::string& section, const std::string& key) const {
    const auto sit = data_.find(section);
    if (sit == data_.end()) return false;
    return sit->second.find(key) != sit->second.end();
}

std::string Config::get_string(const std::string& section, const std::string& key) const {
    if (!has(section, key))
        throw ConfigError(origin_ + ": missing required key '" + key + "' in section [" +
                          section + "]");
    return data_.at(section).at(key);
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
    return has(section, key) ? data_.at(section).at(key) : fallback;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& raw = data_.at(section).at(key);
    try {
        std::size_t pos = 0;
        const double v = std::stod(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key '" + key + "' in [" + section +
                          "] is not a number: '" + raw + "'");
    }
}

int Config::get_int(const std::string& section, const std::string& key, int fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& raw = data_.at(section).at(key);
    try {
        std::size_t pos = 0;
        const long v = std::stol(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return static_cast<int>(v);
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key '" + key + "' in [" + section +
                          "] is not an integer: '" + raw + "'");
    }
}

std::uint64_t Config::get_u64(const std::string& section, const std::string& key,
                              std::uint64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& raw = data_.at(section).at(key);
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key '" + key + "' in [" + section +
                          "] is not a nonnegative integer: '" + raw + "'");
    }
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& raw = data_.at(section).at(key);
    if (raw == "true" || raw == "1" || raw == "yes") return true;
    if (raw == "false" || raw == "0" || raw == "no") return false;
    throw ConfigError(origin_ + ": key '" + key + "' in [" + section +
                      "] is not a boolean: '" + raw + "'");
}

Vec Config::get_double_list(const std::string& section, const std::string& key,
                            const Vec& fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& raw = data_.at(section).at(key);
    Vec out;
    for (const std::string& item : split_list(raw)) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(origin_ + ": key '" + key + "' in [" + section +
                              "] has a non-numeric entry: '" + item + "'");
        }
    }
    return out;
}

std::vector<std::string> Config::get_string_list(
    const std::string& section, const std::string& key,
    const std::vector<std::string>& fallback) const {
    if (!has(section, key)) return fallback;
    return split_list(data_.at(section).at(key));
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
    data_[section][key] = value;
}

std::string Config::to_text() const {
    std::string out;
    for (const auto& [section, kv] : data_) {
        out += "[" + section + "]\n";
        for (const auto& [key, value] : kv) out += key + " = " + value + "\n";
        out += "\n";
    }
    return out;
}

}  // namespace ergolab
