#include "uspose/train/train.hpp"

#include <algorithm>
#include <cmath>

#include "uspose/error.hpp"
#include "uspose/io.hpp"

namespace uspose::train {

void Scheduler::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError(strf("scheduler gamma %g outside (0, 1]", gamma));
    if (kind == SchedulerKind::Step && step_size < 1)
        throw ConfigError(strf("scheduler step_size %d must be >= 1", step_size));
}

const char* scheduler_name(SchedulerKind k) {
    switch (k) {
        case SchedulerKind::None: return "none";
        case SchedulerKind::Exponential: return "exponential";
        case SchedulerKind::Step: return "step";
    }
    return "none";
}

SchedulerKind scheduler_from_name(const std::string& name) {
    if (name == "none") return SchedulerKind::None;
    if (name == "exponential") return SchedulerKind::Exponential;
    if (name == "step") return SchedulerKind::Step;
    throw ConfigError(strf("unknown scheduler '%s' (none|exponential|step)", name.c_str()));
}

double scheduler_lr(const Scheduler& sched, double lr0, int epoch) {
    if (epoch < 0) throw UsageError(strf("scheduler_lr: negative epoch %d", epoch));
    switch (sched.kind) {
        case SchedulerKind::None: return lr0;
        case SchedulerKind::Exponential: return lr0 * std::pow(sched.gamma, epoch);
        case SchedulerKind::Step: return lr0 * std::pow(sched.gamma, epoch / sched.step_size);
    }
    return lr0;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError(strf("learning_rate %g must be positive", learning_rate));
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
        throw ConfigError(strf("betas (%g, %g) must lie in (0, 1)", beta1, beta2));
    if (!(epsilon > 0.0)) throw ConfigError(strf("epsilon %g must be positive", epsilon));
    if (batch_size < 1) throw ConfigError(strf("batch_size %d must be positive", batch_size));
    if (epochs < 1) throw ConfigError(strf("epochs %d must be positive", epochs));
    scheduler.validate();
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j{{"learning_rate", cfg.learning_rate},
                     {"beta1", cfg.beta1},
                     {"beta2", cfg.beta2},
                     {"epsilon", cfg.epsilon},
                     {"batch_size", cfg.batch_size},
                     {"epochs", cfg.epochs},
                     {"seed", cfg.seed},
                     {"shuffle", cfg.shuffle},
                     {"scheduler", {{"kind", scheduler_name(cfg.scheduler.kind)}}}};
    if (cfg.scheduler.kind != SchedulerKind::None) j["scheduler"]["gamma"] = cfg.scheduler.gamma;
    if (cfg.scheduler.kind == SchedulerKind::Step) j["scheduler"]["step_size"] = cfg.scheduler.step_size;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.shuffle = j.value("shuffle", cfg.shuffle);
    if (j.contains("scheduler")) {
        const auto& s = j["scheduler"];
        cfg.scheduler.kind = scheduler_from_name(s.value("kind", "none"));
        cfg.scheduler.gamma = s.value("gamma", cfg.scheduler.gamma);
        cfg.scheduler.step_size = s.value("step_size", cfg.scheduler.step_size);
    }
    cfg.validate();
    return cfg;
}

void adam_step(std::vector<nn::NamedTensor>& params, AdamState& state, double lr, double beta1, double beta2,
               double epsilon) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].tensor.value().size(), 0.0);
            state.v[i].assign(params[i].tensor.value().size(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw UsageError(strf("adam_step: state built for %zu parameters, got %zu", state.m.size(),
                              params.size()));
    ++state.t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].tensor;
        if (!p.has_grad())
            throw UsageError(strf("adam_step: parameter %s has no gradient buffer", params[i].name.c_str()));
        double* value = p.value().data();
        const double* grad = p.grad().data();
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        const size_t n = p.value().size();
        for (size_t k = 0; k < n; ++k) {
            const double g = grad[k];
            if (!std::isfinite(g))
                throw TrainError(strf("adam_step: nonfinite gradient in %s[%zu] at step %lld",
                                      params[i].name.c_str(), k, static_cast<long long>(state.t)));
            m[k] = beta1 * m[k] + (1.0 - beta1) * g;
            v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
            value[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + epsilon);
        }
    }
}

std::string history_csv(const TrainHistory& history) {
    std::string out = "epoch,lr,train_loss,val_acc\n";
    for (const auto& e : history.epochs)
        out += strf("%d,%.17g,%.17g,%.17g\n", e.epoch, e.lr, e.train_loss, e.val_accuracy);
    return out;
}

void save_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
    io::write_text(path, history_csv(history));
}

namespace {

void check_dataset(const std::vector<dsp::NetworkInput>& set, const char* which, int classes) {
    if (set.empty()) throw InputError(strf("%s set is empty", which));
    const auto& first = set.front();
    for (size_t i = 0; i < set.size(); ++i) {
        const auto& in = set[i];
        if (in.channels != first.channels || in.length != first.length || in.modality != first.modality)
            throw InputError(strf("%s set input %zu is %d x %d (%s), expected %d x %d (%s)", which, i,
                                  in.channels, in.length, dsp::modality_name(in.modality), first.channels,
                                  first.length, dsp::modality_name(first.modality)));
        if (in.label < 0 || in.label >= classes)
            throw InputError(strf("%s set input %zu has label %d outside [0, %d)", which, i, in.label, classes));
    }
}

}  // namespace

TrainHistory train(models::Model& model, const std::vector<dsp::NetworkInput>& train_set,
                   const std::vector<dsp::NetworkInput>& val_set, const TrainConfig& cfg) {
    cfg.validate();
    const int classes = std::visit([](const auto& s) { return s.classes; }, model.spec);
    check_dataset(train_set, "train", classes);
    check_dataset(val_set, "val", classes);
    if (train_set.front().channels != model.channels || train_set.front().length != model.length)
        throw InputError(strf("train inputs are %d x %d, model expects %d x %d", train_set.front().channels,
                              train_set.front().length, model.channels, model.length));

    const Rng root(cfg.seed, "train");
    AdamState adam;
    TrainHistory history;
    const size_t n = train_set.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = scheduler_lr(cfg.scheduler, cfg.learning_rate, epoch);
        if (cfg.shuffle) {
            Rng shuffle_rng = root.fork("shuffle").fork(static_cast<uint64_t>(epoch));
            for (size_t i = 0; i < n; ++i) order[i] = i;
            for (size_t i = 0; i + 1 < n; ++i) {
                const auto j = static_cast<size_t>(
                    shuffle_rng.uniform_int(static_cast<int64_t>(i), static_cast<int64_t>(n) - 1));
                std::swap(order[i], order[j]);
            }
        }
        double loss_sum = 0.0;
        int batches = 0;
        for (size_t begin = 0; begin < n; begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(n, begin + static_cast<size_t>(cfg.batch_size));
            std::vector<dsp::NetworkInput> batch(end - begin);
            std::vector<int> labels(end - begin);
            for (size_t i = begin; i < end; ++i) {
                batch[i - begin] = train_set[order[i]];
                labels[i - begin] = train_set[order[i]].label;
            }
            nn::Tape tape;
            Rng dropout_rng =
                root.fork("dropout").fork(static_cast<uint64_t>(epoch)).fork(static_cast<uint64_t>(batches));
            nn::Tensor x = models::batch_tensor(batch, 0, batch.size());
            nn::Tensor logits = model.forward(tape, x, true, dropout_rng);
            nn::Tensor loss = tape.cross_entropy(logits, labels);
            if (!std::isfinite(loss.item()))
                throw TrainError(strf("nonfinite loss %g at epoch %d batch %d", loss.item(), epoch, batches));
            for (auto& p : model.params) p.tensor.zero_grad();
            tape.backward(loss);
            try {
                adam_step(model.params, adam, lr, cfg.beta1, cfg.beta2, cfg.epsilon);
            } catch (const TrainError& e) {
                throw TrainError(strf("%s (epoch %d batch %d)", e.what(), epoch, batches));
            }
            loss_sum += loss.item();
            ++batches;
        }
        history.epochs.push_back({epoch, lr, loss_sum / batches, evaluate(model, val_set)});
    }
    return history;
}

double evaluate(const models::Model& model, const std::vector<dsp::NetworkInput>& test_set) {
    if (test_set.empty()) throw InputError("evaluate: empty test set");
    const auto logits = model.predict(test_set);
    size_t correct = 0;
    for (size_t i = 0; i < test_set.size(); ++i) {
        const auto& row = logits[i];
        size_t best = 0;
        for (size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = c;
        if (static_cast<int>(best) == test_set[i].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

}  // namespace uspose::train
