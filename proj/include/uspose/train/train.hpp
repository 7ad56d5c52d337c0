#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "uspose/models/model.hpp"

namespace uspose::train {

enum class SchedulerKind { None, Exponential, Step };

struct Scheduler {
    SchedulerKind kind = SchedulerKind::None;
    double gamma = 0.9;  // decay factor (Exponential and Step)
    int step_size = 10;  // Step only

    void validate() const;
};

const char* scheduler_name(SchedulerKind k);  // "none" / "exponential" / "step"
SchedulerKind scheduler_from_name(const std::string& name);

// None -> lr0; Exponential -> lr0 * gamma^epoch; Step -> lr0 * gamma^floor(epoch / s).
double scheduler_lr(const Scheduler& sched, double lr0, int epoch);

struct TrainConfig {
    double learning_rate = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 32;
    int epochs = 60;
    Scheduler scheduler;
    uint64_t seed = 0;
    bool shuffle = true;

    void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamState {
    std::vector<std::vector<double>> m, v;  // one slot per parameter tensor
    int64_t t = 0;
};

// One bias-corrected Adam step over the parameters' accumulated gradients.
// Throws TrainError naming the parameter when a gradient entry is nonfinite.
void adam_step(std::vector<nn::NamedTensor>& params, AdamState& state, double lr, double beta1, double beta2,
               double epsilon);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
};

// csv columns: epoch,lr,train_loss,val_acc
std::string history_csv(const TrainHistory& history);
void save_history_csv(const std::filesystem::path& path, const TrainHistory& history);

// Trains in place: seeded shuffling into batch_size minibatches, cross-entropy
// loss, Adam, scheduler stepping at epoch boundaries, dropout only in
// training passes. Returns the per-epoch history; the final-epoch model is
// kept (no early stopping).
TrainHistory train(models::Model& model, const std::vector<dsp::NetworkInput>& train_set,
                   const std::vector<dsp::NetworkInput>& val_set, const TrainConfig& cfg);

// Fraction of inputs whose argmax logit matches the label; ties resolve to
// the lowest class index.
double evaluate(const models::Model& model, const std::vector<dsp::NetworkInput>& test_set);

}  // namespace uspose::train
