#include "uspose/bench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "uspose/error.hpp"
#include "uspose/io.hpp"

namespace uspose::bench {

namespace fs = std::filesystem;

void save_recording(const fs::path& root, const dsp::RFRecording& rec) {
    rec.validate();
    if (rec.subject_id.empty() || rec.session_id.empty())
        throw UsageError("save_recording: recording needs subject and session ids");
    const fs::path dir = root / rec.subject_id / rec.session_id;
    fs::create_directories(dir);
    io::write_json(dir / "meta.json", {{"channels", rec.channels},
                                       {"frames", rec.frames},
                                       {"samples_per_frame", rec.samples_per_frame},
                                       {"sampling_rate_hz", rec.sampling_rate_hz},
                                       {"center_frequency_hz", rec.center_frequency_hz},
                                       {"label_names", rec.label_names},
                                       {"subject_id", rec.subject_id},
                                       {"session_id", rec.session_id}});
    std::vector<float> f32(rec.samples.size());
    for (size_t i = 0; i < rec.samples.size(); ++i) f32[i] = static_cast<float>(rec.samples[i]);
    io::write_f32_le(dir / "rf.f32", f32);
    std::string labels;
    for (int l : rec.labels) labels += std::to_string(l) + "\n";
    io::write_text(dir / "labels.txt", labels);
}

dsp::RFRecording load_recording(const fs::path& dir) {
    const fs::path meta_path = dir / "meta.json";
    if (!fs::exists(meta_path)) throw DataError(strf("%s: missing meta.json", dir.string().c_str()));
    const nlohmann::json meta = io::read_json(meta_path);
    dsp::RFRecording rec;
    try {
        rec.channels = meta.at("channels").get<int>();
        rec.frames = meta.at("frames").get<int>();
        rec.samples_per_frame = meta.at("samples_per_frame").get<int>();
        rec.sampling_rate_hz = meta.at("sampling_rate_hz").get<double>();
        rec.center_frequency_hz = meta.at("center_frequency_hz").get<double>();
        rec.label_names = meta.value("label_names", std::vector<std::string>{});
        rec.subject_id = meta.value("subject_id", dir.parent_path().filename().string());
        rec.session_id = meta.value("session_id", dir.filename().string());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(strf("%s: %s", meta_path.string().c_str(), e.what()));
    }

    const fs::path rf_path = dir / "rf.f32";
    const std::vector<float> f32 = io::read_f32_le(rf_path);
    const size_t expected = static_cast<size_t>(rec.frames) * rec.channels * rec.samples_per_frame;
    if (f32.size() != expected)
        throw DataError(strf("%s: expected %zu bytes (%zu samples), found %zu bytes (mismatch at byte offset %zu)",
                             rf_path.string().c_str(), expected * 4, expected, f32.size() * 4,
                             std::min(expected, f32.size()) * 4));
    rec.samples.resize(f32.size());
    for (size_t i = 0; i < f32.size(); ++i) {
        if (!std::isfinite(f32[i]))
            throw DataError(strf("%s: non-finite sample at byte offset %zu", rf_path.string().c_str(), i * 4));
        rec.samples[i] = static_cast<double>(f32[i]);
    }

    const fs::path labels_path = dir / "labels.txt";
    std::istringstream lines(io::read_text(labels_path));
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        try {
            rec.labels.push_back(std::stoi(line));
        } catch (const std::exception&) {
            throw DataError(strf("%s: bad label line '%s'", labels_path.string().c_str(), line.c_str()));
        }
    }
    if (static_cast<int>(rec.labels.size()) != rec.frames)
        throw DataError(strf("%s: %zu labels for %d frames (session %s/%s)", labels_path.string().c_str(),
                             rec.labels.size(), rec.frames, rec.subject_id.c_str(), rec.session_id.c_str()));
    try {
        rec.validate();
    } catch (const Error& e) {
        throw DataError(strf("%s/%s: %s", rec.subject_id.c_str(), rec.session_id.c_str(), e.what()));
    }
    return rec;
}

std::vector<dsp::RFRecording> load_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw DataError(strf("%s: not a directory", root.string().c_str()));
    std::vector<fs::path> session_dirs;
    for (const auto& subject : fs::directory_iterator(root)) {
        if (!subject.is_directory()) continue;
        for (const auto& session : fs::directory_iterator(subject.path()))
            if (session.is_directory()) session_dirs.push_back(session.path());
    }
    std::sort(session_dirs.begin(), session_dirs.end());
    if (session_dirs.empty()) throw DataError(strf("%s: no <subject>/<session> directories", root.string().c_str()));
    std::vector<dsp::RFRecording> out;
    out.reserve(session_dirs.size());
    for (const auto& dir : session_dirs) out.push_back(load_recording(dir));
    return out;
}

void SplitRatios::validate() const {
    if (!(train > 0.0 && val > 0.0 && test > 0.0))
        throw ConfigError(strf("split ratios (%g, %g, %g) must all be positive", train, val, test));
    if (std::fabs(train + val + test - 1.0) > 1e-9)
        throw ConfigError(strf("split ratios (%g, %g, %g) must sum to 1", train, val, test));
}

std::vector<Split> split_frames(const std::vector<int>& labels, int classes, const SplitRatios& ratios) {
    ratios.validate();
    if (classes < 1) throw UsageError("split_frames: classes must be positive");
    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(classes));
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes)
            throw InputError(strf("split_frames: label %d at frame %zu outside [0, %d)", labels[i], i, classes));
        by_class[static_cast<size_t>(labels[i])].push_back(i);
    }
    std::vector<Split> out(labels.size(), Split::Train);
    for (int k = 0; k < classes; ++k) {
        const auto& frames = by_class[static_cast<size_t>(k)];
        const auto n = frames.size();
        const auto n_train = static_cast<size_t>(std::floor(static_cast<double>(n) * ratios.train + 1e-9));
        const auto n_val = static_cast<size_t>(std::floor(static_cast<double>(n) * ratios.val + 1e-9));
        if (n_train < 1 || n_val < 1 || n < n_train + n_val + 1)
            throw DataError(strf("class %d has %zu frames, too few for three non-empty splits", k, n));
        for (size_t i = 0; i < n; ++i)
            out[frames[i]] = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    }
    return out;
}

std::vector<dsp::NetworkInput> SessionDataset::subset(Split s) const {
    std::vector<dsp::NetworkInput> out;
    for (size_t i = 0; i < inputs.size(); ++i)
        if (assignment[i] == s) out.push_back(inputs[i]);
    return out;
}

SessionDataset split_session(const dsp::RFRecording& rec, const dsp::PreprocConfig& cfg,
                             const SplitRatios& ratios, uint64_t seed) {
    (void)seed;
    SessionDataset out;
    out.subject_id = rec.subject_id;
    out.session_id = rec.session_id;
    out.inputs = dsp::preprocess(rec, cfg);
    const int classes = rec.label_names.empty()
                            ? 1 + *std::max_element(rec.labels.begin(), rec.labels.end())
                            : static_cast<int>(rec.label_names.size());
    out.assignment = split_frames(rec.labels, classes, ratios);
    return out;
}

}  // namespace uspose::bench
