#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "uspose/bench/bench.hpp"
#include "uspose/bench/dataset.hpp"
#include "uspose/bench/synth.hpp"
#include "uspose/error.hpp"
#include "uspose/hpo/space.hpp"
#include "uspose/hpo/tpe.hpp"
#include "uspose/io.hpp"
#include "uspose/models/model.hpp"
#include "uspose/train/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uspose;

namespace {

// ---------------------------------------------------------------------------
// dotted-key config machinery
//
// Every subcommand owns a complete default document; the schema is that
// document itself, so the keys and defaults printed by --help are the ones
// the run starts from. A config file and --set overrides may only touch keys
// that exist in the schema; all violations are collected before giving up.
// ---------------------------------------------------------------------------

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, const json*>>& out) {
    if (j.is_object() && !j.empty()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
        return;
    }
    out.emplace_back(prefix, &j);
}

const char* type_label(const json& v) {
    if (v.is_null()) return "any";
    if (v.is_boolean()) return "bool";
    if (v.is_number()) return "number";
    if (v.is_string()) return "string";
    if (v.is_array()) return "array";
    return "object";
}

bool types_compatible(const json& schema, const json& value) {
    if (schema.is_null()) return true;  // free-form slot (e.g. an inline model spec)
    if (schema.is_number() && value.is_number()) return true;
    return schema.type_name() == std::string(value.type_name());
}

enum class SchemaHit { Found, Freeform, Missing, NotAGroup };

// Walks a dotted path through the schema document.
SchemaHit schema_lookup(const json& schema, const std::string& dotted, const json** leaf) {
    const json* node = &schema;
    size_t start = 0;
    while (true) {
        if (node->is_null()) return SchemaHit::Freeform;
        const size_t dot = dotted.find('.', start);
        const std::string key = dotted.substr(start, dot - start);
        if (!node->is_object()) return SchemaHit::NotAGroup;
        const auto it = node->find(key);
        if (it == node->end()) return SchemaHit::Missing;
        node = &*it;
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *leaf = node;
    return SchemaHit::Found;
}

void check_keys(const json& schema, const json& doc, const std::string& origin,
                std::vector<std::string>& violations) {
    std::vector<std::pair<std::string, const json*>> leaves;
    flatten(doc, "", leaves);
    for (const auto& [key, value] : leaves) {
        const json* leaf = nullptr;
        switch (schema_lookup(schema, key, &leaf)) {
            case SchemaHit::Found:
                if (!types_compatible(*leaf, *value))
                    violations.push_back(strf("%s: key '%s' expects %s, got %s", origin.c_str(), key.c_str(),
                                              type_label(*leaf), type_label(*value)));
                break;
            case SchemaHit::Missing:
                violations.push_back(strf("%s: unknown key '%s'", origin.c_str(), key.c_str()));
                break;
            case SchemaHit::NotAGroup:
                violations.push_back(strf("%s: key '%s' descends into a non-group value", origin.c_str(),
                                          key.c_str()));
                break;
            case SchemaHit::Freeform:
                break;
        }
    }
}

void deep_merge(json& base, const json& doc) {
    if (!base.is_object() || !doc.is_object()) {
        base = doc;
        return;
    }
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (base.contains(it.key()))
            deep_merge(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
}

json parse_override_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception&) {
        return json(text);  // bare strings need no quoting on the command line
    }
}

void set_dotted(json& doc, const std::string& dotted, const json& value) {
    std::string pointer = "/";
    for (char c : dotted) pointer += c == '.' ? '/' : c;
    doc[json::json_pointer(pointer)] = value;
}

std::string config_key_footer(const json& schema) {
    std::vector<std::pair<std::string, const json*>> leaves;
    flatten(schema, "", leaves);
    std::string out = "config keys and defaults (set via --config file and --set key=value):\n";
    for (const auto& [key, value] : leaves) out += strf("  %s = %s\n", key.c_str(), value->dump().c_str());
    return out;
}

// ---------------------------------------------------------------------------
// shared invocation plumbing
// ---------------------------------------------------------------------------

struct Invocation {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out;
    bool force = false;
    int jobs = 0;  // 0 = not passed
    int verbosity = 0;
};

void add_common_options(CLI::App* cmd, Invocation& inv, const json& schema, bool with_jobs) {
    cmd->add_option("--config", inv.config_path, "json config file");
    cmd->add_option("--set", inv.overrides, "dotted key=value override, repeatable")
        ->take_all()
        ->type_name("KEY=VALUE");
    cmd->add_option("--out", inv.out, "output directory (default $USPOSE_OUT_ROOT/<subcommand>)");
    cmd->add_flag("--force", inv.force, "replace a non-empty output directory");
    if (with_jobs) cmd->add_option("--jobs", inv.jobs, "worker threads; 1 is bit-exact")->check(CLI::PositiveNumber);
    cmd->add_flag("-v,--verbose", inv.verbosity, "print progress detail");
    cmd->footer(config_key_footer(schema));
}

// Collects every config violation instead of stopping at the first.
json assemble_config(const json& schema, const Invocation& inv, std::vector<std::string>& violations) {
    json merged = schema;
    if (!inv.config_path.empty()) {
        if (!fs::exists(inv.config_path)) {
            violations.push_back(strf("config file %s does not exist", inv.config_path.c_str()));
        } else {
            try {
                const json doc = io::read_json(inv.config_path);
                check_keys(schema, doc, inv.config_path, violations);
                deep_merge(merged, doc);
            } catch (const Error& e) {
                violations.push_back(e.what());
            } catch (const json::exception& e) {
                violations.push_back(strf("%s: %s", inv.config_path.c_str(), e.what()));
            }
        }
    }
    for (const auto& over : inv.overrides) {
        const size_t eq = over.find('=');
        if (eq == std::string::npos || eq == 0) {
            violations.push_back(strf("override '%s' is not of the form key=value", over.c_str()));
            continue;
        }
        const std::string key = over.substr(0, eq);
        const json value = parse_override_value(over.substr(eq + 1));
        const json* leaf = nullptr;
        switch (schema_lookup(schema, key, &leaf)) {
            case SchemaHit::Found:
                if (!types_compatible(*leaf, value)) {
                    violations.push_back(strf("override '%s' expects %s, got %s", key.c_str(),
                                              type_label(*leaf), type_label(value)));
                    continue;
                }
                break;
            case SchemaHit::Missing:
                violations.push_back(strf("override references unknown key '%s'", key.c_str()));
                continue;
            case SchemaHit::NotAGroup:
                violations.push_back(strf("override key '%s' descends into a non-group value", key.c_str()));
                continue;
            case SchemaHit::Freeform:
                break;
        }
        set_dotted(merged, key, value);
    }
    return merged;
}

fs::path resolve_out(const Invocation& inv, const char* subcommand, std::vector<std::string>& violations) {
    if (!inv.out.empty()) return inv.out;
    const char* root = std::getenv("USPOSE_OUT_ROOT");
    if (root && *root) return fs::path(root) / subcommand;
    violations.push_back("no output directory: pass --out or set USPOSE_OUT_ROOT");
    return {};
}

void prepare_out(const fs::path& out, bool force) {
    if (fs::exists(out) && !fs::is_directory(out))
        throw ConfigError(strf("%s: exists and is not a directory", out.string().c_str()));
    if (fs::is_directory(out) && !fs::is_empty(out)) {
        if (!force)
            throw ConfigError(strf("%s already has contents; pass --force to replace them",
                                   out.string().c_str()));
        fs::remove_all(out);
    }
    fs::create_directories(out);
}

std::string fnv1a64_hex(const std::vector<uint8_t>& bytes) {
    uint64_t h = 1469598103934665603ULL;
    for (uint8_t b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return strf("%016llx", static_cast<unsigned long long>(h));
}

// Per-section construction so one bad block does not hide the others.
struct Sections {
    std::vector<std::string>& errors;
    template <typename F>
    void run(F&& f) {
        try {
            f();
        } catch (const Error& e) {
            errors.push_back(e.what());
        } catch (const json::exception& e) {
            errors.push_back(e.what());
        }
    }
};

int report_violations(const std::vector<std::string>& violations) {
    std::fprintf(stderr, "configuration errors:\n");
    for (const auto& v : violations) std::fprintf(stderr, "  - %s\n", v.c_str());
    return 1;
}

// ---------------------------------------------------------------------------
// schema blocks
// ---------------------------------------------------------------------------

json synth_block_schema() {
    json j = bench::synth_config_to_json(bench::SynthConfig{});
    j.erase("subject_id");  // session ids are derived per generated session
    j.erase("session_id");
    j["reflectors"] = json::array();  // empty selects the built-in depth pattern
    return j;
}

json preproc_block_schema() {
    return {{"modality", "a_mode_us"},
            {"dynamic_range_db", 60.0},
            {"trim", 2},
            {"tgc", {{"kind", "unit"}, {"alpha", 0.0}, {"curve", json::array()}}},
            {"bandpass",
             {{"enabled", false}, {"low_hz", 0.0}, {"high_hz", 0.0}, {"filter_order", 64}}}};
}

json train_block_schema() {
    json j = train::train_config_to_json(train::TrainConfig{});
    j["scheduler"] = {{"kind", "none"}, {"gamma", 0.9}, {"step_size", 10}};
    return j;
}

json split_block_schema() { return {{"train", 0.6}, {"val", 0.2}, {"test", 0.2}}; }

json model_block_schema() { return {{"name", "udacnn_ref"}, {"spec", nullptr}}; }

json session_block_schema(bool with_selection) {
    json j{{"path", ""}};
    if (with_selection) {
        j["subject"] = "";
        j["session"] = "";
    }
    return j;
}

// ---------------------------------------------------------------------------
// block parsers (throw ConfigError with the offending key)
// ---------------------------------------------------------------------------

dsp::PreprocConfig parse_preproc_block(const json& p) {
    json doc = p;
    const json bp = doc.at("bandpass");
    doc.erase("bandpass");
    dsp::PreprocConfig cfg = bench::preproc_config_from_json(doc);
    if (bp.value("enabled", false)) {
        dsp::BandpassSpec spec;
        spec.low_hz = bp.at("low_hz").get<double>();
        spec.high_hz = bp.at("high_hz").get<double>();
        spec.filter_order = bp.at("filter_order").get<int>();
        if (!(spec.low_hz > 0.0) || !(spec.high_hz > spec.low_hz))
            throw ConfigError(strf("preprocess.bandpass: band [%g, %g] Hz must satisfy 0 < low < high",
                                   spec.low_hz, spec.high_hz));
        cfg.bandpass = spec;
    }
    return cfg;
}

bench::SplitRatios parse_split_block(const json& s) {
    bench::SplitRatios r;
    r.train = s.at("train").get<double>();
    r.val = s.at("val").get<double>();
    r.test = s.at("test").get<double>();
    r.validate();
    return r;
}

models::ModelSpec parse_model_block(const json& m) {
    if (m.contains("spec") && !m["spec"].is_null()) return models::spec_from_json(m["spec"]);
    const std::string name = m.at("name").get<std::string>();
    if (name == "udacnn_ref") return models::udacnn_ref();
    if (name == "usvit") return models::usvit_default();
    throw ConfigError(strf("model '%s' is not a shipped reference (udacnn_ref|usvit); set model.spec",
                           name.c_str()));
}

bench::SynthConfig parse_synth_block(const json& s) {
    json doc = s;
    if (doc.contains("reflectors") && doc["reflectors"].empty()) doc.erase("reflectors");
    return bench::synth_config_from_json(doc);
}

dsp::RFRecording pick_session(const json& d) {
    const std::string path = d.at("path").get<std::string>();
    if (path.empty()) throw ConfigError("data.path: no dataset directory given");
    auto all = bench::load_dataset(path);
    const std::string subject = d.value("subject", "");
    const std::string session = d.value("session", "");
    if (subject.empty() && session.empty()) {
        if (all.size() == 1) return std::move(all.front());
        throw ConfigError(strf("data.path holds %zu sessions; select one via data.subject and data.session",
                               all.size()));
    }
    for (auto& rec : all)
        if ((subject.empty() || rec.subject_id == subject) &&
            (session.empty() || rec.session_id == session))
            return std::move(rec);
    throw DataError(strf("no session %s/%s under %s", subject.c_str(), session.c_str(), path.c_str()));
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

json synth_schema() {
    return {{"synth", synth_block_schema()}, {"subjects", 1}, {"sessions", 1}};
}

int run_synth(const json& cfg, const fs::path& out, const Invocation& inv) {
    bench::DataSource src;
    src.source = "synth";
    src.synth = parse_synth_block(cfg.at("synth"));
    src.subjects = cfg.at("subjects").get<int>();
    src.sessions = cfg.at("sessions").get<int>();
    const auto recordings = bench::resolve_data(src);
    prepare_out(out, inv.force);
    for (const auto& rec : recordings) {
        bench::save_recording(out, rec);
        if (inv.verbosity > 0)
            std::printf("  %s/%s: %d frames of %d x %d\n", rec.subject_id.c_str(), rec.session_id.c_str(),
                        rec.frames, rec.channels, rec.samples_per_frame);
    }
    io::write_json(out / "synth_config.json", cfg);
    std::printf("wrote %zu sessions to %s\n", recordings.size(), out.string().c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

json preprocess_schema() {
    return {{"data", session_block_schema(false)}, {"preprocess", preproc_block_schema()}};
}

int run_preprocess(const json& cfg, const fs::path& out, const Invocation& inv) {
    const dsp::PreprocConfig pp = parse_preproc_block(cfg.at("preprocess"));
    const std::string path = cfg.at("data").at("path").get<std::string>();
    if (path.empty()) throw ConfigError("data.path: no dataset directory given");
    const auto recordings = bench::load_dataset(path);
    prepare_out(out, inv.force);
    int channels = 0, length = 0;
    for (const auto& rec : recordings) {
        const auto inputs = dsp::preprocess(rec, pp);
        channels = inputs.at(0).channels;
        length = inputs.at(0).length;
        std::vector<float> flat;
        flat.reserve(inputs.size() * static_cast<size_t>(channels) * length);
        json labels = json::array();
        for (const auto& in : inputs) {
            for (double v : in.data) flat.push_back(static_cast<float>(v));
            labels.push_back(in.label);
        }
        const fs::path dir = out / rec.subject_id / rec.session_id;
        fs::create_directories(dir);
        io::write_f32_le(dir / "inputs.f32", flat);
        io::write_json(dir / "inputs.json", {{"subject_id", rec.subject_id},
                                             {"session_id", rec.session_id},
                                             {"modality", dsp::modality_name(pp.modality)},
                                             {"channels", channels},
                                             {"length", length},
                                             {"frames", inputs.size()},
                                             {"labels", labels}});
        if (inv.verbosity > 0)
            std::printf("  %s/%s: %zu frames\n", rec.subject_id.c_str(), rec.session_id.c_str(), inputs.size());
    }
    std::printf("preprocessed %zu sessions (%d x %d, %s) to %s\n", recordings.size(), channels, length,
                dsp::modality_name(pp.modality), out.string().c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// train / eval
// ---------------------------------------------------------------------------

json train_schema() {
    return {{"data", session_block_schema(true)},
            {"model", model_block_schema()},
            {"train", train_block_schema()},
            {"preprocess", preproc_block_schema()},
            {"split", split_block_schema()}};
}

int run_train(const json& cfg, const fs::path& out, const Invocation& inv) {
    std::vector<std::string> errors;
    Sections sec{errors};
    models::ModelSpec spec;
    train::TrainConfig tc;
    dsp::PreprocConfig pp;
    bench::SplitRatios ratios;
    sec.run([&] { spec = parse_model_block(cfg.at("model")); });
    sec.run([&] { tc = train::train_config_from_json(cfg.at("train")); });
    sec.run([&] { pp = parse_preproc_block(cfg.at("preprocess")); });
    sec.run([&] { ratios = parse_split_block(cfg.at("split")); });
    if (!errors.empty()) return report_violations(errors);

    const dsp::RFRecording rec = pick_session(cfg.at("data"));
    const bench::SessionDataset ds = bench::split_session(rec, pp, ratios, tc.seed);
    const auto train_set = ds.subset(bench::Split::Train);
    const auto val_set = ds.subset(bench::Split::Val);
    const auto test_set = ds.subset(bench::Split::Test);
    const auto& first = train_set.at(0);

    models::Model model = models::build_model(spec, first.channels, first.length, tc.seed);
    if (inv.verbosity > 0)
        std::printf("  %s/%s: %zu train / %zu val / %zu test frames, %lld parameters\n",
                    rec.subject_id.c_str(), rec.session_id.c_str(), train_set.size(), val_set.size(),
                    test_set.size(), static_cast<long long>(model.param_count()));
    const train::TrainHistory history = train::train(model, train_set, val_set, tc);
    const double test_accuracy = train::evaluate(model, test_set);

    prepare_out(out, inv.force);
    models::save_model(out / "checkpoint", model,
                       {{"train", cfg.at("train")},
                        {"session", {{"subject", rec.subject_id}, {"session", rec.session_id}}},
                        {"modality", dsp::modality_name(pp.modality)},
                        {"final_val_accuracy", history.epochs.back().val_accuracy},
                        {"test_accuracy", test_accuracy}});
    train::save_history_csv(out / "history.csv", history);
    std::string digests;
    for (const char* file : {"checkpoint/params.f64", "checkpoint/meta.json"})
        digests += strf("%s  %s\n", fnv1a64_hex(io::read_bytes(out / file)).c_str(), file);
    io::write_text(out / "digests.txt", digests);

    std::printf("train_loss %.6f\n", history.epochs.back().train_loss);
    std::printf("val_accuracy %.6f\n", history.epochs.back().val_accuracy);
    std::printf("test_accuracy %.6f\n", test_accuracy);
    std::printf("checkpoint_digest %s\n", fnv1a64_hex(io::read_bytes(out / "checkpoint/params.f64")).c_str());
    return 0;
}

json eval_schema() {
    return {{"data", session_block_schema(true)},
            {"checkpoint", ""},
            {"preprocess", preproc_block_schema()},
            {"split", split_block_schema()}};
}

int run_eval(const json& cfg, const fs::path& out, const Invocation& inv) {
    const std::string ckpt = cfg.at("checkpoint").get<std::string>();
    if (ckpt.empty()) throw ConfigError("checkpoint: no checkpoint directory given");
    const dsp::PreprocConfig pp = parse_preproc_block(cfg.at("preprocess"));
    const bench::SplitRatios ratios = parse_split_block(cfg.at("split"));

    const models::Model model = models::load_model(ckpt);
    const dsp::RFRecording rec = pick_session(cfg.at("data"));
    const bench::SessionDataset ds = bench::split_session(rec, pp, ratios, 0);
    const auto test_set = ds.subset(bench::Split::Test);
    const double accuracy = train::evaluate(model, test_set);

    prepare_out(out, inv.force);
    io::write_json(out / "eval.json", {{"checkpoint", ckpt},
                                       {"subject", rec.subject_id},
                                       {"session", rec.session_id},
                                       {"modality", dsp::modality_name(pp.modality)},
                                       {"test_frames", test_set.size()},
                                       {"test_accuracy", accuracy}});
    if (inv.verbosity > 0) std::printf("  %zu test frames\n", test_set.size());
    std::printf("test_accuracy %.6f\n", accuracy);
    return 0;
}

// ---------------------------------------------------------------------------
// hpo
// ---------------------------------------------------------------------------

json hpo_schema() {
    return {{"space_file", ""},
            {"algorithm", "tpe"},
            {"tpe",
             {{"budget", 500}, {"warmup", 50}, {"split_fraction", 0.25}, {"n_candidates", 24}, {"seed", 0}}},
            {"top_k", 10},
            {"objective",
             {{"kind", "quadratic"},
              {"data", session_block_schema(true)},
              {"model", model_block_schema()},
              {"train", train_block_schema()},
              {"preprocess", preproc_block_schema()},
              {"split", split_block_schema()}}}};
}

double as_double(const hpo::ParamValue& v, const std::string& name) {
    if (const auto* d = std::get_if<double>(&v)) return *d;
    if (const auto* i = std::get_if<int64_t>(&v)) return static_cast<double>(*i);
    try {
        return std::stod(std::get<std::string>(v));
    } catch (const std::exception&) {
        throw ConfigError(strf("hpo: parameter '%s' value '%s' is not numeric", name.c_str(),
                               std::get<std::string>(v).c_str()));
    }
}

int64_t as_int(const hpo::ParamValue& v, const std::string& name) {
    if (const auto* i = std::get_if<int64_t>(&v)) return *i;
    if (const auto* s = std::get_if<std::string>(&v)) {
        try {
            return std::stoll(*s);
        } catch (const std::exception&) {
            throw ConfigError(strf("hpo: parameter '%s' value '%s' is not an integer", name.c_str(),
                                   s->c_str()));
        }
    }
    throw ConfigError(strf("hpo: parameter '%s' must be integer-valued", name.c_str()));
}

// Reserved parameter names the training objective understands.
void apply_training_param(models::ModelSpec& spec, train::TrainConfig& tc, const std::string& name,
                          const hpo::ParamValue& v) {
    if (name == "lr" || name == "learning_rate") {
        tc.learning_rate = as_double(v, name);
    } else if (name == "epochs") {
        tc.epochs = static_cast<int>(as_int(v, name));
    } else if (name == "batch_size") {
        tc.batch_size = static_cast<int>(as_int(v, name));
    } else if (name == "beta1") {
        tc.beta1 = as_double(v, name);
    } else if (name == "beta2") {
        tc.beta2 = as_double(v, name);
    } else if (name == "scheduler") {
        tc.scheduler.kind = train::scheduler_from_name(std::get<std::string>(v));
    } else if (name == "gamma") {
        tc.scheduler.gamma = as_double(v, name);
    } else if (name == "step_size") {
        tc.scheduler.step_size = static_cast<int>(as_int(v, name));
    } else if (name == "dropout") {
        const double rate = as_double(v, name);
        if (auto* vit = std::get_if<models::ViTSpec>(&spec)) {
            vit->dropout = rate;
        } else {
            auto& cnn = std::get<models::CNNSpec>(spec);
            bool found = false;
            for (auto& layer : cnn.layers)
                if (auto* d = std::get_if<models::DropoutLayer>(&layer)) {
                    d->rate = rate;
                    found = true;
                }
            // A spec without dropout gets one on the flattened features.
            if (!found) cnn.layers.insert(cnn.layers.end() - 1, models::DropoutLayer{rate});
        }
    } else if (name == "pe_dimension" || name == "patch_height" || name == "patch_width" ||
               name == "heads" || name == "encoder_blocks" || name == "ffn_mul") {
        auto* vit = std::get_if<models::ViTSpec>(&spec);
        if (!vit) throw ConfigError(strf("hpo: parameter '%s' needs a transformer objective model", name.c_str()));
        const int value = static_cast<int>(as_int(v, name));
        if (name == "pe_dimension") vit->pe_dimension = value;
        else if (name == "patch_height") vit->patch_height = value;
        else if (name == "patch_width") vit->patch_width = value;
        else if (name == "heads") vit->heads = value;
        else if (name == "encoder_blocks") vit->encoder_blocks = value;
        else vit->ffn_mul = value;
    } else {
        throw ConfigError(strf("hpo: parameter '%s' does not map onto the training objective", name.c_str()));
    }
}

double quadratic_objective(const hpo::SearchSpace& space, const hpo::Config& cfg) {
    double deficit = 0.0;
    for (const auto& p : space.params) {
        const auto it = cfg.find(p.name);
        if (it == cfg.end()) continue;
        double u = 0.0;
        if (const auto* f = std::get_if<hpo::FloatSpec>(&p.kind)) {
            const double x = std::get<double>(it->second);
            u = f->log_scale ? (std::log(x) - std::log(f->low)) / (std::log(f->high) - std::log(f->low))
                             : (x - f->low) / (f->high - f->low);
        } else if (const auto* n = std::get_if<hpo::IntSpec>(&p.kind)) {
            u = n->high > n->low ? static_cast<double>(std::get<int64_t>(it->second) - n->low) /
                                       static_cast<double>(n->high - n->low)
                                 : 0.0;
        } else {
            const auto& choices = std::get<hpo::CatSpec>(p.kind).choices;
            const auto& s = std::get<std::string>(it->second);
            const auto pos = std::find(choices.begin(), choices.end(), s) - choices.begin();
            u = choices.size() > 1 ? static_cast<double>(pos) / static_cast<double>(choices.size() - 1) : 0.0;
        }
        deficit += (u - 0.7) * (u - 0.7);
    }
    return -deficit;
}

json param_value_json(const hpo::ParamValue& v) {
    if (const auto* d = std::get_if<double>(&v)) return *d;
    if (const auto* i = std::get_if<int64_t>(&v)) return *i;
    return std::get<std::string>(v);
}

int run_hpo(const json& cfg, const fs::path& out, const Invocation& inv) {
    const std::string space_path = cfg.at("space_file").get<std::string>();
    if (space_path.empty()) throw ConfigError("space_file: no search-space file given");
    const hpo::SearchSpace space = hpo::space_from_json(io::read_json(space_path));
    space.validate();

    hpo::TPEConfig tpe_cfg;
    const json& t = cfg.at("tpe");
    tpe_cfg.budget = t.at("budget").get<int>();
    tpe_cfg.warmup = t.at("warmup").get<int>();
    tpe_cfg.split_fraction = t.at("split_fraction").get<double>();
    tpe_cfg.n_candidates = t.at("n_candidates").get<int>();
    tpe_cfg.seed = t.at("seed").get<uint64_t>();
    tpe_cfg.validate();

    const std::string algorithm = cfg.at("algorithm").get<std::string>();
    if (algorithm != "tpe" && algorithm != "random")
        throw ConfigError(strf("algorithm '%s' is not one of tpe|random", algorithm.c_str()));

    const json& obj_cfg = cfg.at("objective");
    const std::string kind = obj_cfg.at("kind").get<std::string>();
    hpo::Objective objective;
    if (kind == "quadratic") {
        objective = [&space](const hpo::Config& c, uint64_t) { return quadratic_objective(space, c); };
    } else if (kind == "train") {
        const models::ModelSpec base_spec = parse_model_block(obj_cfg.at("model"));
        const train::TrainConfig base_tc = train::train_config_from_json(obj_cfg.at("train"));
        const dsp::PreprocConfig pp = parse_preproc_block(obj_cfg.at("preprocess"));
        const bench::SplitRatios ratios = parse_split_block(obj_cfg.at("split"));
        for (const auto& p : space.params) {  // fail fast on unmapped names
            models::ModelSpec probe_spec = base_spec;
            train::TrainConfig probe_tc = base_tc;
            hpo::ParamValue probe_value;
            if (const auto* f = std::get_if<hpo::FloatSpec>(&p.kind))
                probe_value = f->low;
            else if (const auto* n = std::get_if<hpo::IntSpec>(&p.kind))
                probe_value = n->low;
            else
                probe_value = std::get<hpo::CatSpec>(p.kind).choices.front();
            apply_training_param(probe_spec, probe_tc, p.name, probe_value);
        }
        const dsp::RFRecording rec = pick_session(obj_cfg.at("data"));
        const bench::SessionDataset ds = bench::split_session(rec, pp, ratios, tpe_cfg.seed);
        auto train_set = std::make_shared<std::vector<dsp::NetworkInput>>(ds.subset(bench::Split::Train));
        auto val_set = std::make_shared<std::vector<dsp::NetworkInput>>(ds.subset(bench::Split::Val));
        objective = [base_spec, base_tc, train_set, val_set](const hpo::Config& c, uint64_t seed) {
            models::ModelSpec spec = base_spec;
            train::TrainConfig tc = base_tc;
            for (const auto& [name, value] : c) apply_training_param(spec, tc, name, value);
            tc.seed = seed;
            const auto& first = train_set->at(0);
            models::Model model = models::build_model(spec, first.channels, first.length, seed);
            return train::train(model, *train_set, *val_set, tc).epochs.back().val_accuracy;
        };
    } else {
        throw ConfigError(strf("objective.kind '%s' is not one of quadratic|train", kind.c_str()));
    }

    const hpo::StudyResult result = algorithm == "tpe"
                                        ? hpo::optimize(objective, space, tpe_cfg)
                                        : hpo::random_search(objective, space, tpe_cfg.budget, tpe_cfg.seed);

    prepare_out(out, inv.force);
    hpo::save_history_csv(out / "history.csv", result.history, space);
    io::write_json(out / "space.json", hpo::space_to_json(space));
    json trials = json::array();
    for (const auto& trial : result.history) {
        json jc = json::object();
        for (const auto& [name, value] : trial.config) jc[name] = param_value_json(value);
        json jt{{"id", trial.id}, {"config", jc}, {"seed", trial.seed}, {"duration_s", trial.duration_s}};
        if (trial.status == hpo::TrialStatus::Ok)
            jt["objective"] = trial.objective;
        else
            jt["error"] = trial.error;
        trials.push_back(std::move(jt));
    }
    io::write_json(out / "study.json", {{"algorithm", algorithm}, {"trials", trials}});

    int completed = 0;
    for (const auto& trial : result.history) completed += trial.status == hpo::TrialStatus::Ok;
    if (completed > 0) {
        const auto& best = result.best();
        json jc = json::object();
        for (const auto& [name, value] : best.config) jc[name] = param_value_json(value);
        io::write_json(out / "best.json",
                       {{"trial", best.id}, {"objective", best.objective}, {"config", jc}, {"seed", best.seed}});
        const int k = std::min(cfg.at("top_k").get<int>(), static_cast<int>(result.history.size()));
        const auto summaries = hpo::hp_importance(result.history, space, k);
        io::write_text(out / "importance.txt", hpo::importance_table(summaries, k));
        std::printf("%d/%d trials completed\n", completed, tpe_cfg.budget);
        std::printf("best trial %d objective %.6g\n", best.id, best.objective);
        for (const auto& [name, value] : best.config)
            std::printf("  %s = %s\n", name.c_str(), hpo::value_str(value).c_str());
        if (inv.verbosity > 0) std::fputs(hpo::importance_table(summaries, k).c_str(), stdout);
    } else {
        std::printf("0/%d trials completed\n", tpe_cfg.budget);
        throw TrainError("every trial failed; see study.json");
    }
    return 0;
}

// ---------------------------------------------------------------------------
// bench / report
// ---------------------------------------------------------------------------

json bench_schema() {
    json j{{"models", json::array({{{"name", "udacnn_ref"}}})},
           {"modalities", json::array({"a_mode_us"})},
           {"schedulers", json::array({{{"kind", "none"}}})},
           {"seeds", 10},
           {"base_seed", 0},
           {"train", train_block_schema()},
           {"preprocess", preproc_block_schema()},
           {"split", split_block_schema()},
           {"data",
            {{"source", "synth"},
             {"synth", synth_block_schema()},
             {"subjects", 1},
             {"sessions", 1},
             {"path", ""}}},
           {"jobs", 1}};
    return j;
}

bench::BenchConfig parse_bench_config(const json& cfg, std::vector<std::string>& errors) {
    bench::BenchConfig out;
    Sections sec{errors};
    sec.run([&] {
        out.models.clear();
        for (const auto& m : cfg.at("models")) {
            bench::ModelEntry entry;
            entry.name = m.at("name").get<std::string>();
            entry.spec = m.contains("spec") && !m["spec"].is_null() ? models::spec_from_json(m["spec"])
                                                                    : parse_model_block(m);
        out.models.push_back(std::move(entry));
        }
    });
    sec.run([&] {
        out.modalities.clear();
        for (const auto& m : cfg.at("modalities"))
            out.modalities.push_back(dsp::modality_from_name(m.get<std::string>()));
    });
    sec.run([&] {
        out.schedulers.clear();
        for (const auto& s : cfg.at("schedulers")) {
            train::Scheduler sched;
            sched.kind = train::scheduler_from_name(s.at("kind").get<std::string>());
            sched.gamma = s.value("gamma", sched.gamma);
            sched.step_size = s.value("step_size", sched.step_size);
            sched.validate();
            out.schedulers.push_back(sched);
        }
    });
    sec.run([&] { out.train = train::train_config_from_json(cfg.at("train")); });
    sec.run([&] { out.preprocess = parse_preproc_block(cfg.at("preprocess")); });
    sec.run([&] { out.split = parse_split_block(cfg.at("split")); });
    sec.run([&] {
        const json& d = cfg.at("data");
        out.data.source = d.at("source").get<std::string>();
        out.data.subjects = d.at("subjects").get<int>();
        out.data.sessions = d.at("sessions").get<int>();
        out.data.path = d.at("path").get<std::string>();
        out.data.synth = parse_synth_block(d.at("synth"));
        out.data.validate();
    });
    sec.run([&] {
        out.seeds = cfg.at("seeds").get<int>();
        out.base_seed = cfg.at("base_seed").get<uint64_t>();
        out.jobs = cfg.at("jobs").get<int>();
        if (errors.empty()) out.validate();
    });
    return out;
}

int run_bench(const json& cfg, const fs::path& out, const Invocation& inv) {
    std::vector<std::string> errors;
    bench::BenchConfig bc = parse_bench_config(cfg, errors);
    if (!errors.empty()) return report_violations(errors);

    const auto sessions = bench::resolve_data(bc.data);
    if (inv.verbosity > 0)
        std::printf("  %zu sessions, %zu models, %zu modalities, %zu schedulers, %d seeds\n", sessions.size(),
                    bc.models.size(), bc.modalities.size(), bc.schedulers.size(), bc.seeds);
    const bench::BenchmarkReport report = bench::intra_session_benchmark(bc, sessions);

    prepare_out(out, inv.force);
    io::write_json(out / "report.json", bench::report_to_json(report));
    const std::string text = bench::render_report(report);
    io::write_text(out / "report.txt", text);
    io::write_text(out / "cells.csv", bench::cells_csv(report));
    io::write_json(out / "bench_config.json", cfg);
    std::fputs(text.c_str(), stdout);
    std::printf("report written to %s\n", out.string().c_str());
    return 0;
}

json report_schema() { return {{"input", ""}}; }

int run_report(const json& cfg, const fs::path& out, const Invocation& inv) {
    const std::string input = cfg.at("input").get<std::string>();
    if (input.empty()) throw ConfigError("input: no report.json given");
    bench::BenchmarkReport report;
    try {
        report = bench::report_from_json(io::read_json(input));
    } catch (const json::exception& e) {
        throw DataError(strf("%s: %s", input.c_str(), e.what()));
    }
    prepare_out(out, inv.force);
    const std::string text = bench::render_report(report);
    io::write_text(out / "report.txt", text);
    io::write_text(out / "cells.csv", bench::cells_csv(report));
    std::fputs(text.c_str(), stdout);
    return 0;
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

int run_guarded(const json& schema, const Invocation& inv, const char* name,
                int (*runner)(const json&, const fs::path&, const Invocation&)) {
    std::vector<std::string> violations;
    json cfg = assemble_config(schema, inv, violations);
    const fs::path out = resolve_out(inv, name, violations);
    if (!violations.empty()) return report_violations(violations);
    if (inv.jobs > 0 && cfg.contains("jobs")) cfg["jobs"] = inv.jobs;
    try {
        return runner(cfg, out, inv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration errors:\n  - %s\n", e.what());
        return 1;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "configuration errors:\n  - %s\n", e.what());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ultrasound hand-pose benchmark toolkit"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
        json schema;
        int (*runner)(const json&, const fs::path&, const Invocation&);
        bool with_jobs;
        Invocation inv;
    };
    std::vector<Sub> subs;
    subs.push_back({"synth", "generate a seeded synthetic dataset", synth_schema(), run_synth, false, {}});
    subs.push_back({"preprocess", "convert recordings to network inputs", preprocess_schema(), run_preprocess,
                    false, {}});
    subs.push_back({"train", "train one model on one session", train_schema(), run_train, false, {}});
    subs.push_back({"eval", "evaluate a checkpoint on a session's test split", eval_schema(), run_eval,
                    false, {}});
    subs.push_back({"hpo", "run a hyperparameter study over a search space", hpo_schema(), run_hpo, false, {}});
    subs.push_back({"bench", "run the full benchmark grid", bench_schema(), run_bench, true, {}});
    subs.push_back({"report", "render an existing report.json", report_schema(), run_report, false, {}});

    std::map<std::string, CLI::App*> cmds;
    for (auto& sub : subs) {
        CLI::App* cmd = app.add_subcommand(sub.name, sub.help);
        add_common_options(cmd, sub.inv, sub.schema, sub.with_jobs);
        cmds[sub.name] = cmd;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;  // command-line problems are validation failures
    }

    for (auto& sub : subs)
        if (cmds[sub.name]->parsed()) return run_guarded(sub.schema, sub.inv, sub.name, sub.runner);
    return 1;
}
