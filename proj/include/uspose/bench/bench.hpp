#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "uspose/bench/dataset.hpp"
#include "uspose/bench/synth.hpp"
#include "uspose/models/model.hpp"
#include "uspose/train/train.hpp"

namespace uspose::bench {

// Stable label used in reports and cell-seed derivation, e.g. "step(10,0.5)".
std::string scheduler_label(const train::Scheduler& s);

nlohmann::json preproc_config_to_json(const dsp::PreprocConfig& cfg);
dsp::PreprocConfig preproc_config_from_json(const nlohmann::json& j);

struct ModelEntry {
    std::string name;
    models::ModelSpec spec;
};

struct DataSource {
    std::string source = "synth";  // "synth" | "dir"
    SynthConfig synth;             // template; ids and seed derived per session
    int subjects = 1;
    int sessions = 1;
    std::filesystem::path path;    // dir source

    void validate() const;
};

std::vector<dsp::RFRecording> resolve_data(const DataSource& src);

struct BenchConfig {
    std::vector<ModelEntry> models;
    std::vector<dsp::Modality> modalities;
    std::vector<train::Scheduler> schedulers;
    int seeds = 10;  // seed indices 0..seeds-1
    uint64_t base_seed = 0;
    train::TrainConfig train;  // learning_rate/epochs/...; seed comes per cell
    dsp::PreprocConfig preprocess;  // modality is overridden per cell
    SplitRatios split;
    DataSource data;
    int jobs = 1;

    void validate() const;
};

nlohmann::json bench_config_to_json(const BenchConfig& cfg);
BenchConfig bench_config_from_json(const nlohmann::json& j);

struct BenchCell {
    std::string model;
    std::string modality;   // modality_name()
    std::string scheduler;  // scheduler_label()
    std::string subject_id, session_id;
    int seed_index = 0;
    uint64_t derived_seed = 0;
    bool failed = false;
    std::string error;
    double accuracy = 0.0;
    double duration_s = 0.0;
};

struct BenchmarkReport {
    std::vector<BenchCell> cells;  // full grid, row-major in config order
    std::vector<std::pair<std::string, int64_t>> param_counts;  // per model

    // Mean accuracy over completed cells; (value, completed count).
    std::pair<double, int> model_mean(const std::string& model) const;
    std::pair<double, int> grid_mean(const std::string& modality, const std::string& scheduler) const;
};

// One train+eval per (model x modality x scheduler x session x seed) cell.
// Failed cells are recorded and the grid continues. jobs > 1 runs cells on
// worker threads; results land in fixed slots so the report is identical.
BenchmarkReport intra_session_benchmark(const BenchConfig& cfg, const std::vector<dsp::RFRecording>& sessions);

nlohmann::json report_to_json(const BenchmarkReport& report);
BenchmarkReport report_from_json(const nlohmann::json& j);

// Deterministic text tables: per-model ranking by mean accuracy (descending),
// the scheduler x modality grid, and a failure section when needed.
std::string render_report(const BenchmarkReport& report);

// csv columns: model,modality,scheduler,subject,session,seed_index,derived_seed,status,accuracy,duration_s
std::string cells_csv(const BenchmarkReport& report);

}  // namespace uspose::bench
