#pragma once

#include <filesystem>
#include <functional>
#include <memory>

#include "uspose/hpo/space.hpp"

namespace uspose::hpo {

enum class TrialStatus { Ok, Failed };

struct Trial {
    int id = 0;
    Config config;
    double objective = 0.0;  // meaningful only when status == Ok; higher is better
    TrialStatus status = TrialStatus::Ok;
    uint64_t seed = 0;
    double duration_s = 0.0;
    std::string error;
};

struct TPEConfig {
    int budget = 500;
    int warmup = 50;
    double split_fraction = 0.25;
    int n_candidates = 24;
    uint64_t seed = 0;

    void validate() const;
};

// Top ceil(split_fraction * n) trials by objective (descending, stable: an
// earlier trial outranks a later one with equal objective) vs the rest.
std::pair<std::vector<Trial>, std::vector<Trial>> split_observations(const std::vector<Trial>& trials,
                                                                     double split_fraction);

// Per-parameter Parzen density: a mixture of truncated Gaussians (floats,
// discretized for integers) or smoothed frequencies (categoricals), always
// with one uniform prior component. An empty observation set is the prior.
class ParzenDensity {
public:
    virtual ~ParzenDensity() = default;
    virtual double pdf(const ParamValue& v) const = 0;
    virtual ParamValue sample(Rng& rng) const = 0;
};

std::unique_ptr<ParzenDensity> build_parzen(const ParamSpec& spec, const std::vector<ParamValue>& observations);

constexpr double kAcquisitionFloor = 1e-12;

// Per-parameter ratio score; suggest() multiplies these over active params.
inline double acquisition(double pdf_good, double pdf_bad) {
    return pdf_good / (pdf_bad > kAcquisitionFloor ? pdf_bad : kAcquisitionFloor);
}

// Next configuration: uniform during warmup, otherwise the best of
// n_candidates draws from the good densities scored by pdf_good / pdf_bad.
Config suggest(const std::vector<Trial>& history, const SearchSpace& space, const TPEConfig& cfg, Rng& rng);

using Objective = std::function<double(const Config& config, uint64_t seed)>;

struct StudyResult {
    std::vector<Trial> history;
    int best_index = -1;  // argmax objective among ok trials; -1 if none

    const Trial& best() const;
};

// Runs exactly cfg.budget evaluations; a throwing objective marks the trial
// failed (excluded from densities, still counted against the budget).
StudyResult optimize(const Objective& objective, const SearchSpace& space, const TPEConfig& cfg);

StudyResult random_search(const Objective& objective, const SearchSpace& space, int budget, uint64_t seed);

struct ParamSummary {
    std::string name;
    int present = 0;  // how many of the top-k trials had the parameter active
    std::vector<std::pair<std::string, int>> histogram;  // categorical / integer
    std::vector<std::pair<double, double>> quantiles;    // float: (q, value)
};

// Distribution of each parameter over the top-k completed trials.
std::vector<ParamSummary> hp_importance(const std::vector<Trial>& history, const SearchSpace& space, int k);

std::string importance_table(const std::vector<ParamSummary>& summaries, int k);

// csv columns: trial,<param...>,objective,status,duration_s (inactive empty).
std::string history_csv(const std::vector<Trial>& history, const SearchSpace& space);
void save_history_csv(const std::filesystem::path& path, const std::vector<Trial>& history,
                      const SearchSpace& space);

}  // namespace uspose::hpo
