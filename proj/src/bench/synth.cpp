#include "uspose/bench/synth.hpp"

#include <cmath>

#include "uspose/error.hpp"
#include "uspose/rng.hpp"

namespace uspose::bench {

namespace {

constexpr double kTwoPi = 6.283185307179586;

}  // namespace

std::vector<std::vector<std::vector<Reflector>>> SynthConfig::resolved_reflectors() const {
    if (!reflectors.empty()) return reflectors;
    // Depth-separated default: class k sits at 15%..70% of the frame, with a
    // small per-channel stagger and a fainter echo behind the main return.
    std::vector<std::vector<std::vector<Reflector>>> out(static_cast<size_t>(classes));
    const double spf = samples_per_frame;
    for (int k = 0; k < classes; ++k) {
        out[k].resize(static_cast<size_t>(channels));
        const double base = spf * (0.15 + 0.55 * k / std::max(classes - 1, 1));
        for (int c = 0; c < channels; ++c)
            out[k][c] = {{base + 0.01 * spf * c / std::max(channels, 1), 1.0 - 0.04 * c},
                         {base + 0.08 * spf, 0.4}};
    }
    return out;
}

void SynthConfig::validate() const {
    if (channels < 1) throw ConfigError(strf("synth: channels %d must be positive", channels));
    if (samples_per_frame < 16)
        throw ConfigError(strf("synth: samples_per_frame %d too small", samples_per_frame));
    if (!(sampling_rate_hz > 0.0) || !(center_frequency_hz > 0.0) ||
        center_frequency_hz >= sampling_rate_hz / 2.0)
        throw ConfigError(strf("synth: center frequency %g Hz must lie below Nyquist of %g Hz",
                               center_frequency_hz, sampling_rate_hz / 2.0));
    if (classes < 2) throw ConfigError(strf("synth: classes %d must be at least 2", classes));
    if (frames_per_class < 1) throw ConfigError(strf("synth: frames_per_class %d must be positive", frames_per_class));
    if (!(frame_rate_hz > 0.0)) throw ConfigError(strf("synth: frame_rate_hz %g must be positive", frame_rate_hz));
    if (!(burst_sigma_s > 0.0)) throw ConfigError(strf("synth: burst_sigma_s %g must be positive", burst_sigma_s));
    if (rotation_amplitude_samples < 0.0 || wrist_rotation_hz < 0.0)
        throw ConfigError("synth: rotation parameters must be nonnegative");
    if (noise_std < 0.0) throw ConfigError(strf("synth: noise_std %g must be nonnegative", noise_std));

    const auto refs = resolved_reflectors();
    if (static_cast<int>(refs.size()) != classes)
        throw ConfigError(strf("synth: %zu reflector classes for %d classes", refs.size(), classes));
    for (int k = 0; k < classes; ++k) {
        if (static_cast<int>(refs[k].size()) != channels)
            throw ConfigError(strf("synth: class %d has %zu reflector channels for %d channels", k,
                                   refs[k].size(), channels));
        for (int c = 0; c < channels; ++c)
            for (const auto& r : refs[k][c])
                if (r.delay_samples < 0.0 ||
                    r.delay_samples + rotation_amplitude_samples >= samples_per_frame)
                    throw ConfigError(strf("synth: class %d channel %d reflector delay %g outside frame of %d",
                                           k, c, r.delay_samples, samples_per_frame));
    }
    for (int a = 0; a < classes; ++a)
        for (int b = a + 1; b < classes; ++b) {
            bool same = refs[a].size() == refs[b].size();
            for (size_t c = 0; same && c < refs[a].size(); ++c) {
                same = refs[a][c].size() == refs[b][c].size();
                for (size_t r = 0; same && r < refs[a][c].size(); ++r)
                    same = refs[a][c][r].delay_samples == refs[b][c][r].delay_samples &&
                           refs[a][c][r].amplitude == refs[b][c][r].amplitude;
            }
            if (same) throw ConfigError(strf("synth: classes %d and %d share an identical reflector pattern", a, b));
        }
}

dsp::RFRecording synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    const auto refs = cfg.resolved_reflectors();
    dsp::RFRecording rec;
    rec.channels = cfg.channels;
    rec.frames = cfg.classes * cfg.frames_per_class;
    rec.samples_per_frame = cfg.samples_per_frame;
    rec.sampling_rate_hz = cfg.sampling_rate_hz;
    rec.center_frequency_hz = cfg.center_frequency_hz;
    rec.subject_id = cfg.subject_id;
    rec.session_id = cfg.session_id;
    for (int k = 0; k < cfg.classes; ++k) rec.label_names.push_back(strf("gesture_%d", k));
    rec.samples.assign(static_cast<size_t>(rec.frames) * cfg.channels * cfg.samples_per_frame, 0.0);
    rec.labels.resize(static_cast<size_t>(rec.frames));

    const double sigma = cfg.burst_sigma_s * cfg.sampling_rate_hz;  // in samples
    const double omega = kTwoPi * cfg.center_frequency_hz / cfg.sampling_rate_hz;
    const Rng root(cfg.seed, "synth");
    for (int f = 0; f < rec.frames; ++f) {
        const int label = f % cfg.classes;
        rec.labels[static_cast<size_t>(f)] = label;
        const double t = f / cfg.frame_rate_hz;
        const double wobble =
            cfg.rotation_amplitude_samples * std::sin(kTwoPi * cfg.wrist_rotation_hz * t);
        Rng noise = root.fork("noise").fork(static_cast<uint64_t>(f));
        for (int c = 0; c < cfg.channels; ++c) {
            double* frame = &rec.at(f, c, 0);
            for (const auto& r : refs[label][c]) {
                const double tau = r.delay_samples + wobble;
                // The burst is negligible past 6 sigma; keep the loop local.
                const int lo = std::max(0, static_cast<int>(std::floor(tau - 6.0 * sigma)));
                const int hi = std::min(cfg.samples_per_frame - 1, static_cast<int>(std::ceil(tau + 6.0 * sigma)));
                for (int n = lo; n <= hi; ++n) {
                    const double d = n - tau;
                    frame[n] += r.amplitude * std::exp(-0.5 * d * d / (sigma * sigma)) * std::cos(omega * d);
                }
            }
            for (int n = 0; n < cfg.samples_per_frame; ++n) {
                const double v = frame[n] + cfg.noise_std * noise.normal();
                frame[n] = static_cast<double>(static_cast<float>(v));
            }
        }
    }
    rec.validate();
    return rec;
}

nlohmann::json synth_config_to_json(const SynthConfig& cfg) {
    nlohmann::json j{{"channels", cfg.channels},
                     {"samples_per_frame", cfg.samples_per_frame},
                     {"sampling_rate_hz", cfg.sampling_rate_hz},
                     {"center_frequency_hz", cfg.center_frequency_hz},
                     {"classes", cfg.classes},
                     {"frames_per_class", cfg.frames_per_class},
                     {"frame_rate_hz", cfg.frame_rate_hz},
                     {"burst_sigma_s", cfg.burst_sigma_s},
                     {"rotation_amplitude_samples", cfg.rotation_amplitude_samples},
                     {"wrist_rotation_hz", cfg.wrist_rotation_hz},
                     {"noise_std", cfg.noise_std},
                     {"seed", cfg.seed},
                     {"subject_id", cfg.subject_id},
                     {"session_id", cfg.session_id}};
    if (!cfg.reflectors.empty()) {
        nlohmann::json classes = nlohmann::json::array();
        for (const auto& cls : cfg.reflectors) {
            nlohmann::json chans = nlohmann::json::array();
            for (const auto& ch : cls) {
                nlohmann::json rs = nlohmann::json::array();
                for (const auto& r : ch) rs.push_back({{"delay_samples", r.delay_samples}, {"amplitude", r.amplitude}});
                chans.push_back(std::move(rs));
            }
            classes.push_back(std::move(chans));
        }
        j["reflectors"] = std::move(classes);
    }
    return j;
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
    SynthConfig cfg;
    cfg.channels = j.value("channels", cfg.channels);
    cfg.samples_per_frame = j.value("samples_per_frame", cfg.samples_per_frame);
    cfg.sampling_rate_hz = j.value("sampling_rate_hz", cfg.sampling_rate_hz);
    cfg.center_frequency_hz = j.value("center_frequency_hz", cfg.center_frequency_hz);
    cfg.classes = j.value("classes", cfg.classes);
    cfg.frames_per_class = j.value("frames_per_class", cfg.frames_per_class);
    cfg.frame_rate_hz = j.value("frame_rate_hz", cfg.frame_rate_hz);
    cfg.burst_sigma_s = j.value("burst_sigma_s", cfg.burst_sigma_s);
    cfg.rotation_amplitude_samples = j.value("rotation_amplitude_samples", cfg.rotation_amplitude_samples);
    cfg.wrist_rotation_hz = j.value("wrist_rotation_hz", cfg.wrist_rotation_hz);
    cfg.noise_std = j.value("noise_std", cfg.noise_std);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.subject_id = j.value("subject_id", cfg.subject_id);
    cfg.session_id = j.value("session_id", cfg.session_id);
    if (j.contains("reflectors")) {
        for (const auto& cls : j["reflectors"]) {
            std::vector<std::vector<Reflector>> chans;
            for (const auto& ch : cls) {
                std::vector<Reflector> rs;
                for (const auto& r : ch)
                    rs.push_back({r.at("delay_samples").get<double>(), r.value("amplitude", 1.0)});
                chans.push_back(std::move(rs));
            }
            cfg.reflectors.push_back(std::move(chans));
        }
    }
    cfg.validate();
    return cfg;
}

}  // namespace uspose::bench
