#include "uspose/hpo/tpe.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include "uspose/error.hpp"
#include "uspose/io.hpp"

namespace uspose::hpo {

void TPEConfig::validate() const {
    if (budget < 1) throw ConfigError(strf("tpe budget %d must be positive", budget));
    if (warmup < 0 || warmup >= budget)
        throw ConfigError(strf("tpe warmup %d must lie in [0, budget %d)", warmup, budget));
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
        throw ConfigError(strf("tpe split_fraction %g outside (0, 1)", split_fraction));
    if (n_candidates < 1) throw ConfigError(strf("tpe n_candidates %d must be positive", n_candidates));
}

std::pair<std::vector<Trial>, std::vector<Trial>> split_observations(const std::vector<Trial>& trials,
                                                                     double split_fraction) {
    if (trials.size() < 2)
        throw UsageError(strf("split_observations: need at least 2 trials, got %zu", trials.size()));
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
        throw UsageError(strf("split_observations: fraction %g outside (0, 1)", split_fraction));
    std::vector<size_t> order(trials.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return trials[a].objective > trials[b].objective; });
    const auto n_good = static_cast<size_t>(std::ceil(split_fraction * static_cast<double>(trials.size())));
    std::pair<std::vector<Trial>, std::vector<Trial>> out;
    for (size_t i = 0; i < order.size(); ++i)
        (i < n_good ? out.first : out.second).push_back(trials[order[i]]);
    return out;
}

namespace {

double normal_pdf(double z) { return std::exp(-0.5 * z * z) * 0.3989422804014327; }
double normal_cdf(double z) { return 0.5 * std::erfc(-z * 0.7071067811865476); }

// Neighbor-gap bandwidths over [lo, hi]: each center's width is its larger
// gap to the adjacent centers (domain edges act as neighbors), clipped to
// [1e-3, 1] times the domain width.
std::vector<double> bandwidths(const std::vector<double>& centers, double lo, double hi) {
    const size_t n = centers.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return centers[a] < centers[b]; });
    const double width = hi - lo;
    std::vector<double> bw(n);
    for (size_t j = 0; j < n; ++j) {
        const double c = centers[order[j]];
        const double prev = j == 0 ? lo : centers[order[j - 1]];
        const double next = j + 1 == n ? hi : centers[order[j + 1]];
        bw[order[j]] = std::clamp(std::max(c - prev, next - c), 1e-3 * width, width);
    }
    return bw;
}

class FloatParzen final : public ParzenDensity {
public:
    FloatParzen(const FloatSpec& spec, const std::vector<ParamValue>& obs) : spec_(spec) {
        lo_ = spec.log_scale ? std::log(spec.low) : spec.low;
        hi_ = spec.log_scale ? std::log(spec.high) : spec.high;
        for (const auto& v : obs) {
            const double x = std::get<double>(v);
            centers_.push_back(spec.log_scale ? std::log(x) : x);
        }
        bw_ = bandwidths(centers_, lo_, hi_);
    }

    double pdf(const ParamValue& v) const override {
        const double x = std::get<double>(v);
        if (x < spec_.low || x > spec_.high) return 0.0;
        const double u = spec_.log_scale ? std::log(x) : x;
        const double w = 1.0 / static_cast<double>(centers_.size() + 1);
        double p = w / (hi_ - lo_);  // uniform prior component
        for (size_t i = 0; i < centers_.size(); ++i) {
            const double z = (u - centers_[i]) / bw_[i];
            const double mass =
                normal_cdf((hi_ - centers_[i]) / bw_[i]) - normal_cdf((lo_ - centers_[i]) / bw_[i]);
            p += w * normal_pdf(z) / (bw_[i] * mass);
        }
        return spec_.log_scale ? p / x : p;  // Jacobian of u = log(x)
    }

    ParamValue sample(Rng& rng) const override {
        const auto comp = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(centers_.size())));
        double u;
        if (comp == centers_.size()) {
            u = rng.uniform(lo_, hi_);
        } else {
            u = lo_ - 1.0;
            for (int tries = 0; tries < 256 && (u < lo_ || u > hi_); ++tries)
                u = centers_[comp] + bw_[comp] * rng.normal();
            if (u < lo_ || u > hi_) u = rng.uniform(lo_, hi_);
        }
        const double x = spec_.log_scale ? std::exp(u) : u;
        return std::clamp(x, spec_.low, spec_.high);
    }

private:
    FloatSpec spec_;
    double lo_, hi_;
    std::vector<double> centers_;
    std::vector<double> bw_;
};

class IntParzen final : public ParzenDensity {
public:
    IntParzen(const IntSpec& spec, const std::vector<ParamValue>& obs) : spec_(spec) {
        lo_ = static_cast<double>(spec.low) - 0.5;
        hi_ = static_cast<double>(spec.high) + 0.5;
        for (const auto& v : obs) centers_.push_back(static_cast<double>(std::get<int64_t>(v)));
        bw_ = bandwidths(centers_, lo_, hi_);
    }

    double pdf(const ParamValue& v) const override {
        const int64_t k = std::get<int64_t>(v);
        if (k < spec_.low || k > spec_.high) return 0.0;
        const double w = 1.0 / static_cast<double>(centers_.size() + 1);
        double p = w / static_cast<double>(spec_.high - spec_.low + 1);
        for (size_t i = 0; i < centers_.size(); ++i) {
            const double mass =
                normal_cdf((hi_ - centers_[i]) / bw_[i]) - normal_cdf((lo_ - centers_[i]) / bw_[i]);
            const double cell = normal_cdf((static_cast<double>(k) + 0.5 - centers_[i]) / bw_[i]) -
                                normal_cdf((static_cast<double>(k) - 0.5 - centers_[i]) / bw_[i]);
            p += w * cell / mass;
        }
        return p;
    }

    ParamValue sample(Rng& rng) const override {
        const auto comp = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(centers_.size())));
        if (comp == centers_.size()) return rng.uniform_int(spec_.low, spec_.high);
        double u = lo_ - 1.0;
        for (int tries = 0; tries < 256 && (u < lo_ || u > hi_); ++tries)
            u = centers_[comp] + bw_[comp] * rng.normal();
        if (u < lo_ || u > hi_) return rng.uniform_int(spec_.low, spec_.high);
        return std::clamp<int64_t>(std::llround(u), spec_.low, spec_.high);
    }

private:
    IntSpec spec_;
    double lo_, hi_;
    std::vector<double> centers_;
    std::vector<double> bw_;
};

class CatDensity final : public ParzenDensity {
public:
    CatDensity(const CatSpec& spec, const std::vector<ParamValue>& obs) : choices_(spec.choices) {
        counts_.assign(choices_.size(), 0);
        for (const auto& v : obs) {
            const auto& s = std::get<std::string>(v);
            const auto it = std::find(choices_.begin(), choices_.end(), s);
            if (it == choices_.end())
                throw UsageError(strf("categorical observation '%s' not among the choices", s.c_str()));
            ++counts_[static_cast<size_t>(it - choices_.begin())];
        }
        total_ = static_cast<double>(obs.size() + choices_.size());  // +1 prior count per choice
    }

    double pdf(const ParamValue& v) const override {
        const auto& s = std::get<std::string>(v);
        const auto it = std::find(choices_.begin(), choices_.end(), s);
        if (it == choices_.end()) return 0.0;
        return (counts_[static_cast<size_t>(it - choices_.begin())] + 1.0) / total_;
    }

    ParamValue sample(Rng& rng) const override {
        double u = rng.uniform() * total_;
        for (size_t i = 0; i < choices_.size(); ++i) {
            u -= counts_[i] + 1.0;
            if (u < 0.0) return choices_[i];
        }
        return choices_.back();
    }

private:
    std::vector<std::string> choices_;
    std::vector<int> counts_;
    double total_;
};

std::vector<ParamValue> observed_values(const std::vector<Trial>& trials, const std::string& name) {
    std::vector<ParamValue> out;
    for (const auto& t : trials) {
        const auto it = t.config.find(name);
        if (it != t.config.end()) out.push_back(it->second);
    }
    return out;
}

}  // namespace

std::unique_ptr<ParzenDensity> build_parzen(const ParamSpec& spec, const std::vector<ParamValue>& observations) {
    if (const auto* f = std::get_if<FloatSpec>(&spec.kind))
        return std::make_unique<FloatParzen>(*f, observations);
    if (const auto* n = std::get_if<IntSpec>(&spec.kind))
        return std::make_unique<IntParzen>(*n, observations);
    return std::make_unique<CatDensity>(std::get<CatSpec>(spec.kind), observations);
}

Config suggest(const std::vector<Trial>& history, const SearchSpace& space, const TPEConfig& cfg, Rng& rng) {
    cfg.validate();
    if (static_cast<int>(history.size()) < cfg.warmup) return sample_uniform(space, rng);
    std::vector<Trial> ok;
    for (const auto& t : history)
        if (t.status == TrialStatus::Ok) ok.push_back(t);
    if (ok.size() < 2) return sample_uniform(space, rng);

    const auto [good, bad] = split_observations(ok, cfg.split_fraction);
    std::map<std::string, std::unique_ptr<ParzenDensity>> good_d, bad_d;
    for (const auto& p : space.params) {
        good_d[p.name] = build_parzen(p, observed_values(good, p.name));
        bad_d[p.name] = build_parzen(p, observed_values(bad, p.name));
    }
    Config best;
    double best_score = -1.0;
    for (int c = 0; c < cfg.n_candidates; ++c) {
        Config candidate;
        double score = 1.0;
        for (const auto& p : space.params) {
            if (!space.is_active(p, candidate)) continue;
            const ParamValue v = good_d[p.name]->sample(rng);
            score *= acquisition(good_d[p.name]->pdf(v), bad_d[p.name]->pdf(v));
            candidate[p.name] = v;
        }
        if (score > best_score) {
            best_score = score;
            best = std::move(candidate);
        }
    }
    return best;
}

const Trial& StudyResult::best() const {
    if (best_index < 0) throw UsageError("study has no completed trial");
    return history[static_cast<size_t>(best_index)];
}

namespace {

StudyResult run_study(const Objective& objective, const SearchSpace& space, int budget, uint64_t seed,
                      const std::function<Config(const std::vector<Trial>&, Rng&)>& next_config) {
    space.validate();
    if (budget < 1) throw ConfigError(strf("budget %d must be positive", budget));
    StudyResult result;
    Rng rng(seed, "hpo");
    for (int i = 0; i < budget; ++i) {
        Trial trial;
        trial.id = i;
        trial.config = next_config(result.history, rng);
        trial.seed = derive_seed(seed, {"trial", std::to_string(i)});
        const auto start = std::chrono::steady_clock::now();
        try {
            trial.objective = objective(trial.config, trial.seed);
            trial.status = TrialStatus::Ok;
        } catch (const std::exception& e) {
            trial.status = TrialStatus::Failed;
            trial.error = e.what();
        }
        trial.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (trial.status == TrialStatus::Ok &&
            (result.best_index < 0 ||
             trial.objective > result.history[static_cast<size_t>(result.best_index)].objective))
            result.best_index = i;
        result.history.push_back(std::move(trial));
    }
    return result;
}

}  // namespace

StudyResult optimize(const Objective& objective, const SearchSpace& space, const TPEConfig& cfg) {
    cfg.validate();
    return run_study(objective, space, cfg.budget, cfg.seed,
                     [&](const std::vector<Trial>& history, Rng& rng) {
                         return suggest(history, space, cfg, rng);
                     });
}

StudyResult random_search(const Objective& objective, const SearchSpace& space, int budget, uint64_t seed) {
    return run_study(objective, space, budget, seed,
                     [&](const std::vector<Trial>&, Rng& rng) { return sample_uniform(space, rng); });
}

std::vector<ParamSummary> hp_importance(const std::vector<Trial>& history, const SearchSpace& space, int k) {
    if (history.empty()) throw UsageError("hp_importance: empty history");
    if (k < 1 || k > static_cast<int>(history.size()))
        throw UsageError(strf("hp_importance: k %d outside [1, %zu]", k, history.size()));
    std::vector<Trial> ok;
    for (const auto& t : history)
        if (t.status == TrialStatus::Ok) ok.push_back(t);
    if (ok.empty()) throw UsageError("hp_importance: no completed trials");
    std::stable_sort(ok.begin(), ok.end(),
                     [](const Trial& a, const Trial& b) { return a.objective > b.objective; });
    if (static_cast<int>(ok.size()) > k) ok.resize(static_cast<size_t>(k));

    std::vector<ParamSummary> out;
    for (const auto& p : space.params) {
        ParamSummary s;
        s.name = p.name;
        const auto values = observed_values(ok, p.name);
        s.present = static_cast<int>(values.size());
        if (std::holds_alternative<FloatSpec>(p.kind)) {
            std::vector<double> xs;
            for (const auto& v : values) xs.push_back(std::get<double>(v));
            std::sort(xs.begin(), xs.end());
            if (!xs.empty()) {
                for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) {
                    const double pos = q * static_cast<double>(xs.size() - 1);
                    const auto i0 = static_cast<size_t>(pos);
                    const size_t i1 = std::min(i0 + 1, xs.size() - 1);
                    s.quantiles.emplace_back(q, xs[i0] + (pos - static_cast<double>(i0)) * (xs[i1] - xs[i0]));
                }
            }
        } else if (std::holds_alternative<IntSpec>(p.kind)) {
            std::map<int64_t, int> counts;
            for (const auto& v : values) ++counts[std::get<int64_t>(v)];
            for (const auto& [value, count] : counts) s.histogram.emplace_back(std::to_string(value), count);
        } else {
            const auto& choices = std::get<CatSpec>(p.kind).choices;
            std::map<std::string, int> counts;
            for (const auto& v : values) ++counts[std::get<std::string>(v)];
            for (const auto& c : choices) s.histogram.emplace_back(c, counts.count(c) ? counts[c] : 0);
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::string importance_table(const std::vector<ParamSummary>& summaries, int k) {
    std::string out = strf("parameter distributions over the top %d trials\n", k);
    for (const auto& s : summaries) {
        out += strf("%s (active in %d)\n", s.name.c_str(), s.present);
        for (const auto& [label, count] : s.histogram) out += strf("  %-16s %d\n", label.c_str(), count);
        for (const auto& [q, value] : s.quantiles) out += strf("  q%-15.2f %.6g\n", q, value);
    }
    return out;
}

std::string history_csv(const std::vector<Trial>& history, const SearchSpace& space) {
    std::string out = "trial";
    for (const auto& p : space.params) out += "," + p.name;
    out += ",objective,status,duration_s\n";
    for (const auto& t : history) {
        out += std::to_string(t.id);
        for (const auto& p : space.params) {
            out += ",";
            const auto it = t.config.find(p.name);
            if (it != t.config.end()) out += value_str(it->second);
        }
        if (t.status == TrialStatus::Ok)
            out += strf(",%.17g,ok,", t.objective);
        else
            out += ",,failed,";
        out += strf("%.6f\n", t.duration_s);
    }
    return out;
}

void save_history_csv(const std::filesystem::path& path, const std::vector<Trial>& history,
                      const SearchSpace& space) {
    io::write_text(path, history_csv(history, space));
}

}  // namespace uspose::hpo
