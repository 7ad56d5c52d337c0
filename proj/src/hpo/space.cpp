#include "uspose/hpo/space.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "uspose/error.hpp"

namespace uspose::hpo {

std::string value_str(const ParamValue& v) {
    if (const auto* d = std::get_if<double>(&v)) return strf("%.17g", *d);
    if (const auto* i = std::get_if<int64_t>(&v)) return std::to_string(*i);
    return std::get<std::string>(v);
}

void SearchSpace::validate() const {
    std::set<std::string> seen;
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        if (p.name.empty()) throw ConfigError(strf("search space: parameter %zu has an empty name", i));
        if (!seen.insert(p.name).second)
            throw ConfigError(strf("search space: duplicate parameter '%s'", p.name.c_str()));
        if (const auto* f = std::get_if<FloatSpec>(&p.kind)) {
            if (!(f->low < f->high))
                throw ConfigError(strf("search space: %s: low %g must be < high %g", p.name.c_str(), f->low,
                                       f->high));
            if (f->log_scale && !(f->low > 0.0))
                throw ConfigError(strf("search space: %s: log scale requires low > 0", p.name.c_str()));
        } else if (const auto* n = std::get_if<IntSpec>(&p.kind)) {
            if (!(n->low < n->high))
                throw ConfigError(strf("search space: %s: low %lld must be < high %lld", p.name.c_str(),
                                       static_cast<long long>(n->low), static_cast<long long>(n->high)));
        } else {
            const auto& c = std::get<CatSpec>(p.kind);
            if (c.choices.empty())
                throw ConfigError(strf("search space: %s: empty choice list", p.name.c_str()));
        }
        if (p.parent.empty()) {
            if (!p.parent_values.empty())
                throw ConfigError(strf("search space: %s: parent_values without a parent", p.name.c_str()));
            continue;
        }
        if (p.parent_values.empty())
            throw ConfigError(strf("search space: %s: conditional without parent_values", p.name.c_str()));
        const auto parent = std::find_if(params.begin(), params.begin() + static_cast<ptrdiff_t>(i),
                                         [&](const ParamSpec& q) { return q.name == p.parent; });
        if (parent == params.begin() + static_cast<ptrdiff_t>(i))
            throw ConfigError(strf("search space: %s: parent '%s' must be declared earlier", p.name.c_str(),
                                   p.parent.c_str()));
        const auto* cat = std::get_if<CatSpec>(&parent->kind);
        if (!cat)
            throw ConfigError(strf("search space: %s: parent '%s' is not categorical", p.name.c_str(),
                                   p.parent.c_str()));
        for (const auto& v : p.parent_values)
            if (std::find(cat->choices.begin(), cat->choices.end(), v) == cat->choices.end())
                throw ConfigError(strf("search space: %s: parent value '%s' not among %s choices",
                                       p.name.c_str(), v.c_str(), p.parent.c_str()));
    }
}

const ParamSpec* SearchSpace::find(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

bool SearchSpace::is_active(const ParamSpec& spec, const Config& config) const {
    if (spec.parent.empty()) return true;
    const auto it = config.find(spec.parent);
    if (it == config.end()) return false;
    const auto* v = std::get_if<std::string>(&it->second);
    return v && std::find(spec.parent_values.begin(), spec.parent_values.end(), *v) != spec.parent_values.end();
}

nlohmann::json space_to_json(const SearchSpace& space) {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : space.params) {
        nlohmann::json j{{"name", p.name}};
        if (const auto* f = std::get_if<FloatSpec>(&p.kind)) {
            j["type"] = "float";
            j["low"] = f->low;
            j["high"] = f->high;
            j["scale"] = f->log_scale ? "log" : "linear";
        } else if (const auto* n = std::get_if<IntSpec>(&p.kind)) {
            j["type"] = "int";
            j["low"] = n->low;
            j["high"] = n->high;
        } else {
            j["type"] = "categorical";
            j["choices"] = std::get<CatSpec>(p.kind).choices;
        }
        if (!p.parent.empty()) {
            j["parent"] = p.parent;
            j["parent_values"] = p.parent_values;
        }
        params.push_back(std::move(j));
    }
    return {{"params", params}};
}

SearchSpace space_from_json(const nlohmann::json& j) {
    SearchSpace space;
    for (const auto& pj : j.at("params")) {
        ParamSpec p;
        p.name = pj.at("name").get<std::string>();
        const std::string type = pj.at("type").get<std::string>();
        if (type == "float") {
            FloatSpec f{pj.at("low").get<double>(), pj.at("high").get<double>(), false};
            const std::string scale = pj.value("scale", "linear");
            if (scale == "log")
                f.log_scale = true;
            else if (scale != "linear")
                throw ConfigError(strf("search space: %s: unknown scale '%s'", p.name.c_str(), scale.c_str()));
            p.kind = f;
        } else if (type == "int") {
            p.kind = IntSpec{pj.at("low").get<int64_t>(), pj.at("high").get<int64_t>()};
        } else if (type == "categorical") {
            p.kind = CatSpec{pj.at("choices").get<std::vector<std::string>>()};
        } else {
            throw ConfigError(strf("search space: %s: unknown type '%s'", p.name.c_str(), type.c_str()));
        }
        if (pj.contains("parent")) {
            p.parent = pj.at("parent").get<std::string>();
            p.parent_values = pj.at("parent_values").get<std::vector<std::string>>();
        }
        space.params.push_back(std::move(p));
    }
    space.validate();
    return space;
}

Config sample_uniform(const SearchSpace& space, Rng& rng) {
    Config config;
    for (const auto& p : space.params) {
        if (!space.is_active(p, config)) continue;
        if (const auto* f = std::get_if<FloatSpec>(&p.kind)) {
            config[p.name] = f->log_scale ? std::exp(rng.uniform(std::log(f->low), std::log(f->high)))
                                          : rng.uniform(f->low, f->high);
        } else if (const auto* n = std::get_if<IntSpec>(&p.kind)) {
            config[p.name] = rng.uniform_int(n->low, n->high);
        } else {
            const auto& choices = std::get<CatSpec>(p.kind).choices;
            config[p.name] = choices[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(choices.size()) - 1))];
        }
    }
    return config;
}

}  // namespace uspose::hpo
