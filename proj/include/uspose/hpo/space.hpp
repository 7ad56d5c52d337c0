#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "uspose/rng.hpp"

namespace uspose::hpo {

struct FloatSpec {
    double low = 0.0;
    double high = 1.0;
    bool log_scale = false;
};
struct IntSpec {
    int64_t low = 0;
    int64_t high = 1;
};
struct CatSpec {
    std::vector<std::string> choices;
};

// A parameter is active when it has no parent, or when the parent categorical
// currently takes one of parent_values ("tree-structured" spaces).
struct ParamSpec {
    std::string name;
    std::variant<FloatSpec, IntSpec, CatSpec> kind;
    std::string parent;
    std::vector<std::string> parent_values;
};

using ParamValue = std::variant<double, int64_t, std::string>;
using Config = std::map<std::string, ParamValue>;

std::string value_str(const ParamValue& v);

struct SearchSpace {
    std::vector<ParamSpec> params;

    // Checks bounds, choice lists, and that every parent is an earlier
    // categorical parameter (which makes the conditional graph a forest).
    void validate() const;
    const ParamSpec* find(const std::string& name) const;
    bool is_active(const ParamSpec& spec, const Config& config) const;
};

nlohmann::json space_to_json(const SearchSpace& space);
SearchSpace space_from_json(const nlohmann::json& j);

// One uniform draw over the active parameters (log-uniform for log floats).
Config sample_uniform(const SearchSpace& space, Rng& rng);

}  // namespace uspose::hpo
