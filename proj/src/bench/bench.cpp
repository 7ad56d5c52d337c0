#include "uspose/bench/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "uspose/error.hpp"

namespace uspose::bench {

std::string scheduler_label(const train::Scheduler& s) {
    switch (s.kind) {
        case train::SchedulerKind::None: return "none";
        case train::SchedulerKind::Exponential: return strf("exponential(%g)", s.gamma);
        case train::SchedulerKind::Step: return strf("step(%d,%g)", s.step_size, s.gamma);
    }
    return "none";
}

nlohmann::json preproc_config_to_json(const dsp::PreprocConfig& cfg) {
    nlohmann::json j{{"modality", dsp::modality_name(cfg.modality)},
                     {"dynamic_range_db", cfg.dynamic_range_db},
                     {"trim", cfg.trim}};
    switch (cfg.tgc.kind) {
        case dsp::TgcConfig::Kind::Unit: j["tgc"] = {{"kind", "unit"}}; break;
        case dsp::TgcConfig::Kind::Exponential:
            j["tgc"] = {{"kind", "exponential"}, {"alpha", cfg.tgc.alpha}};
            break;
        case dsp::TgcConfig::Kind::Curve: j["tgc"] = {{"kind", "curve"}, {"curve", cfg.tgc.curve}}; break;
    }
    if (cfg.bandpass)
        j["bandpass"] = {{"low_hz", cfg.bandpass->low_hz},
                         {"high_hz", cfg.bandpass->high_hz},
                         {"filter_order", cfg.bandpass->filter_order}};
    return j;
}

dsp::PreprocConfig preproc_config_from_json(const nlohmann::json& j) {
    dsp::PreprocConfig cfg;
    if (j.contains("modality")) cfg.modality = dsp::modality_from_name(j["modality"].get<std::string>());
    cfg.dynamic_range_db = j.value("dynamic_range_db", cfg.dynamic_range_db);
    cfg.trim = j.value("trim", cfg.trim);
    if (j.contains("tgc")) {
        const auto& t = j["tgc"];
        const std::string kind = t.value("kind", "unit");
        if (kind == "unit") {
            cfg.tgc.kind = dsp::TgcConfig::Kind::Unit;
        } else if (kind == "exponential") {
            cfg.tgc.kind = dsp::TgcConfig::Kind::Exponential;
            cfg.tgc.alpha = t.at("alpha").get<double>();
        } else if (kind == "curve") {
            cfg.tgc.kind = dsp::TgcConfig::Kind::Curve;
            cfg.tgc.curve = t.at("curve").get<std::vector<double>>();
        } else {
            throw ConfigError(strf("unknown tgc kind '%s'", kind.c_str()));
        }
    }
    if (j.contains("bandpass")) {
        const auto& b = j["bandpass"];
        dsp::BandpassSpec spec;
        spec.low_hz = b.at("low_hz").get<double>();
        spec.high_hz = b.at("high_hz").get<double>();
        spec.filter_order = b.value("filter_order", spec.filter_order);
        cfg.bandpass = spec;
    }
    return cfg;
}

void DataSource::validate() const {
    if (source == "synth") {
        if (subjects < 1 || sessions < 1)
            throw ConfigError(strf("data: subjects %d / sessions %d must be positive", subjects, sessions));
        synth.validate();
    } else if (source == "dir") {
        if (path.empty()) throw ConfigError("data: dir source needs a path");
    } else {
        throw ConfigError(strf("data: unknown source '%s' (synth|dir)", source.c_str()));
    }
}

std::vector<dsp::RFRecording> resolve_data(const DataSource& src) {
    src.validate();
    if (src.source == "dir") return load_dataset(src.path);
    std::vector<dsp::RFRecording> out;
    for (int s = 0; s < src.subjects; ++s)
        for (int t = 0; t < src.sessions; ++t) {
            SynthConfig cfg = src.synth;
            cfg.subject_id = strf("s%02d", s + 1);
            cfg.session_id = strf("ses%02d", t + 1);
            cfg.seed = derive_seed(src.synth.seed, {"subject", cfg.subject_id, "session", cfg.session_id});
            out.push_back(synth_generate(cfg));
        }
    return out;
}

void BenchConfig::validate() const {
    if (models.empty()) throw ConfigError("bench: no models");
    for (const auto& m : models)
        if (m.name.empty()) throw ConfigError("bench: model without a name");
    if (modalities.empty()) throw ConfigError("bench: no modalities");
    if (schedulers.empty()) throw ConfigError("bench: no schedulers");
    for (const auto& s : schedulers) s.validate();
    if (seeds < 1) throw ConfigError(strf("bench: seeds %d must be positive", seeds));
    if (jobs < 1) throw ConfigError(strf("bench: jobs %d must be positive", jobs));
    train.validate();
    split.validate();
    data.validate();
}

nlohmann::json bench_config_to_json(const BenchConfig& cfg) {
    nlohmann::json models = nlohmann::json::array();
    for (const auto& m : cfg.models)
        models.push_back({{"name", m.name}, {"spec", models::spec_to_json(m.spec)}});
    nlohmann::json modalities = nlohmann::json::array();
    for (auto m : cfg.modalities) modalities.push_back(dsp::modality_name(m));
    nlohmann::json schedulers = nlohmann::json::array();
    for (const auto& s : cfg.schedulers) {
        nlohmann::json js{{"kind", train::scheduler_name(s.kind)}};
        if (s.kind != train::SchedulerKind::None) js["gamma"] = s.gamma;
        if (s.kind == train::SchedulerKind::Step) js["step_size"] = s.step_size;
        schedulers.push_back(std::move(js));
    }
    nlohmann::json data{{"source", cfg.data.source}};
    if (cfg.data.source == "synth") {
        data["synth"] = synth_config_to_json(cfg.data.synth);
        data["subjects"] = cfg.data.subjects;
        data["sessions"] = cfg.data.sessions;
    } else {
        data["path"] = cfg.data.path.string();
    }
    return {{"models", models},
            {"modalities", modalities},
            {"schedulers", schedulers},
            {"seeds", cfg.seeds},
            {"base_seed", cfg.base_seed},
            {"train", train::train_config_to_json(cfg.train)},
            {"preprocess", preproc_config_to_json(cfg.preprocess)},
            {"split", {{"train", cfg.split.train}, {"val", cfg.split.val}, {"test", cfg.split.test}}},
            {"data", data},
            {"jobs", cfg.jobs}};
}

BenchConfig bench_config_from_json(const nlohmann::json& j) {
    BenchConfig cfg;
    for (const auto& m : j.at("models")) {
        ModelEntry entry;
        entry.name = m.at("name").get<std::string>();
        if (m.contains("spec"))
            entry.spec = models::spec_from_json(m["spec"]);
        else if (entry.name == "udacnn_ref")
            entry.spec = models::udacnn_ref();
        else if (entry.name == "usvit")
            entry.spec = models::usvit_default();
        else
            throw ConfigError(strf("bench: model '%s' has no spec and is not a shipped reference",
                                   entry.name.c_str()));
        cfg.models.push_back(std::move(entry));
    }
    cfg.modalities.clear();
    for (const auto& m : j.at("modalities"))
        cfg.modalities.push_back(dsp::modality_from_name(m.get<std::string>()));
    cfg.schedulers.clear();
    for (const auto& s : j.at("schedulers")) {
        train::Scheduler sched;
        sched.kind = train::scheduler_from_name(s.at("kind").get<std::string>());
        sched.gamma = s.value("gamma", sched.gamma);
        sched.step_size = s.value("step_size", sched.step_size);
        cfg.schedulers.push_back(sched);
    }
    cfg.seeds = j.value("seeds", cfg.seeds);
    cfg.base_seed = j.value("base_seed", cfg.base_seed);
    if (j.contains("train")) cfg.train = train::train_config_from_json(j["train"]);
    if (j.contains("preprocess")) cfg.preprocess = preproc_config_from_json(j["preprocess"]);
    if (j.contains("split")) {
        const auto& s = j["split"];
        cfg.split.train = s.value("train", cfg.split.train);
        cfg.split.val = s.value("val", cfg.split.val);
        cfg.split.test = s.value("test", cfg.split.test);
    }
    if (j.contains("data")) {
        const auto& d = j["data"];
        cfg.data.source = d.value("source", cfg.data.source);
        if (d.contains("synth")) cfg.data.synth = synth_config_from_json(d["synth"]);
        cfg.data.subjects = d.value("subjects", cfg.data.subjects);
        cfg.data.sessions = d.value("sessions", cfg.data.sessions);
        if (d.contains("path")) cfg.data.path = d["path"].get<std::string>();
    }
    cfg.jobs = j.value("jobs", cfg.jobs);
    cfg.validate();
    return cfg;
}

std::pair<double, int> BenchmarkReport::model_mean(const std::string& model) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& c : cells)
        if (c.model == model && !c.failed) {
            sum += c.accuracy;
            ++n;
        }
    return {n ? sum / n : 0.0, n};
}

std::pair<double, int> BenchmarkReport::grid_mean(const std::string& modality,
                                                  const std::string& scheduler) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& c : cells)
        if (c.modality == modality && c.scheduler == scheduler && !c.failed) {
            sum += c.accuracy;
            ++n;
        }
    return {n ? sum / n : 0.0, n};
}

BenchmarkReport intra_session_benchmark(const BenchConfig& cfg, const std::vector<dsp::RFRecording>& sessions) {
    cfg.validate();
    if (sessions.empty()) throw InputError("benchmark needs at least one session");

    // Preprocess and split once per (session, modality); cells only read.
    const size_t n_mod = cfg.modalities.size();
    struct CachedSession {
        std::vector<dsp::NetworkInput> train, val, test;
    };
    std::vector<CachedSession> cache(sessions.size() * n_mod);
    for (size_t si = 0; si < sessions.size(); ++si)
        for (size_t mi = 0; mi < n_mod; ++mi) {
            dsp::PreprocConfig pp = cfg.preprocess;
            pp.modality = cfg.modalities[mi];
            SessionDataset ds = split_session(sessions[si], pp, cfg.split, cfg.base_seed);
            auto& slot = cache[si * n_mod + mi];
            slot.train = ds.subset(Split::Train);
            slot.val = ds.subset(Split::Val);
            slot.test = ds.subset(Split::Test);
        }

    BenchmarkReport report;
    struct CellPlan {
        const ModelEntry* model;
        size_t session, modality;
        train::Scheduler scheduler;
        int seed_index;
    };
    std::vector<CellPlan> plan;
    for (const auto& model : cfg.models)
        for (size_t mi = 0; mi < n_mod; ++mi)
            for (const auto& sched : cfg.schedulers)
                for (size_t si = 0; si < sessions.size(); ++si)
                    for (int seed = 0; seed < cfg.seeds; ++seed)
                        plan.push_back({&model, si, mi, sched, seed});
    report.cells.resize(plan.size());

    auto run_cell = [&](size_t i) {
        const CellPlan& p = plan[i];
        BenchCell& cell = report.cells[i];
        const auto& rec = sessions[p.session];
        cell.model = p.model->name;
        cell.modality = dsp::modality_name(cfg.modalities[p.modality]);
        cell.scheduler = scheduler_label(p.scheduler);
        cell.subject_id = rec.subject_id;
        cell.session_id = rec.session_id;
        cell.seed_index = p.seed_index;
        cell.derived_seed = derive_seed(cfg.base_seed, {p.model->name, cell.modality, cell.scheduler,
                                                        rec.subject_id, rec.session_id,
                                                        std::to_string(p.seed_index)});
        const auto start = std::chrono::steady_clock::now();
        try {
            const auto& data = cache[p.session * n_mod + p.modality];
            const auto& first = data.train.at(0);
            models::Model model = models::build_model(p.model->spec, first.channels, first.length,
                                                      cell.derived_seed);
            train::TrainConfig tc = cfg.train;
            tc.scheduler = p.scheduler;
            tc.seed = cell.derived_seed;
            train::train(model, data.train, data.val, tc);
            cell.accuracy = train::evaluate(model, data.test);
        } catch (const std::exception& e) {
            cell.failed = true;
            cell.error = e.what();
        }
        cell.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };

    if (cfg.jobs == 1) {
        for (size_t i = 0; i < plan.size(); ++i) run_cell(i);
    } else {
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            for (size_t i = next.fetch_add(1); i < plan.size(); i = next.fetch_add(1)) run_cell(i);
        };
        std::vector<std::thread> pool;
        const int n_threads = std::min<int>(cfg.jobs, static_cast<int>(plan.size()));
        pool.reserve(static_cast<size_t>(n_threads));
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (const auto& model : cfg.models) {
        const auto& first = cache[0].train.at(0);
        report.param_counts.emplace_back(model.name,
                                         models::param_count(model.spec, first.channels, first.length));
    }
    return report;
}

nlohmann::json report_to_json(const BenchmarkReport& report) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : report.cells) {
        nlohmann::json j{{"model", c.model},
                         {"modality", c.modality},
                         {"scheduler", c.scheduler},
                         {"subject", c.subject_id},
                         {"session", c.session_id},
                         {"seed_index", c.seed_index},
                         {"derived_seed", c.derived_seed},
                         {"duration_s", c.duration_s}};
        if (c.failed)
            j["error"] = c.error;
        else
            j["accuracy"] = c.accuracy;
        cells.push_back(std::move(j));
    }
    nlohmann::json counts = nlohmann::json::array();
    for (const auto& [name, count] : report.param_counts)
        counts.push_back({{"model", name}, {"params", count}});
    return {{"cells", cells}, {"param_counts", counts}};
}

BenchmarkReport report_from_json(const nlohmann::json& j) {
    BenchmarkReport report;
    for (const auto& c : j.at("cells")) {
        BenchCell cell;
        cell.model = c.at("model").get<std::string>();
        cell.modality = c.at("modality").get<std::string>();
        cell.scheduler = c.at("scheduler").get<std::string>();
        cell.subject_id = c.at("subject").get<std::string>();
        cell.session_id = c.at("session").get<std::string>();
        cell.seed_index = c.at("seed_index").get<int>();
        cell.derived_seed = c.at("derived_seed").get<uint64_t>();
        cell.duration_s = c.value("duration_s", 0.0);
        if (c.contains("accuracy")) {
            cell.accuracy = c["accuracy"].get<double>();
        } else {
            cell.failed = true;
            cell.error = c.value("error", "unknown failure");
        }
        report.cells.push_back(std::move(cell));
    }
    for (const auto& p : j.at("param_counts"))
        report.param_counts.emplace_back(p.at("model").get<std::string>(), p.at("params").get<int64_t>());
    return report;
}

namespace {

template <typename T>
std::vector<T> distinct_in_order(const std::vector<BenchCell>& cells, T BenchCell::*field) {
    std::vector<T> out;
    for (const auto& c : cells)
        if (std::find(out.begin(), out.end(), c.*field) == out.end()) out.push_back(c.*field);
    return out;
}

}  // namespace

std::string render_report(const BenchmarkReport& report) {
    std::string out;
    out += "model ranking (mean classification accuracy over completed cells)\n\n";
    struct Row {
        std::string name;
        double mean;
        int done, failed;
        int64_t params;
    };
    std::vector<Row> rows;
    for (const auto& [name, params] : report.param_counts) {
        const auto [mean, done] = report.model_mean(name);
        int failed = 0;
        for (const auto& c : report.cells)
            if (c.model == name && c.failed) ++failed;
        rows.push_back({name, done ? mean : -1.0, done, failed, params});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.mean > b.mean; });
    out += strf("  %-16s %-8s %-10s %-6s %s\n", "model", "mean_ca", "params", "cells", "failed");
    for (const auto& r : rows)
        out += strf("  %-16s %-8s %-10lld %-6d %d\n", r.name.c_str(),
                    r.done ? strf("%.4f", r.mean).c_str() : "n/a", static_cast<long long>(r.params),
                    r.done + r.failed, r.failed);

    const auto modalities = distinct_in_order(report.cells, &BenchCell::modality);
    const auto schedulers = distinct_in_order(report.cells, &BenchCell::scheduler);
    if (!modalities.empty()) {
        out += "\nscheduler x modality mean classification accuracy\n\n";
        out += strf("  %-16s", "modality");
        for (const auto& s : schedulers) out += strf(" %-18s", s.c_str());
        out += "\n";
        for (const auto& m : modalities) {
            out += strf("  %-16s", m.c_str());
            for (const auto& s : schedulers) {
                const auto [mean, n] = report.grid_mean(m, s);
                out += strf(" %-18s", n ? strf("%.4f", mean).c_str() : "n/a");
            }
            out += "\n";
        }
    }

    bool any_failed = false;
    for (const auto& c : report.cells) any_failed = any_failed || c.failed;
    if (any_failed) {
        out += "\nfailed cells\n\n";
        for (const auto& c : report.cells)
            if (c.failed)
                out += strf("  %s %s %s %s/%s seed %d: %s\n", c.model.c_str(), c.modality.c_str(),
                            c.scheduler.c_str(), c.subject_id.c_str(), c.session_id.c_str(), c.seed_index,
                            c.error.c_str());
    }
    return out;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (char c : s) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    return quoted + "\"";
}

}  // namespace

std::string cells_csv(const BenchmarkReport& report) {
    std::string out = "model,modality,scheduler,subject,session,seed_index,derived_seed,status,accuracy,duration_s\n";
    for (const auto& c : report.cells)
        out += strf("%s,%s,%s,%s,%s,%d,%llu,%s,%s,%.6f\n", csv_field(c.model).c_str(), c.modality.c_str(),
                    csv_field(c.scheduler).c_str(), c.subject_id.c_str(), c.session_id.c_str(), c.seed_index,
                    static_cast<unsigned long long>(c.derived_seed), c.failed ? "failed" : "ok",
                    c.failed ? "" : strf("%.17g", c.accuracy).c_str(), c.duration_s);
    return out;
}

}  // namespace uspose::bench
