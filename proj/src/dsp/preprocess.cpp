#include "uspose/dsp/preprocess.hpp"

#include <cmath>

#include "uspose/error.hpp"

namespace uspose::dsp {

const char* modality_name(Modality m) {
    return m == Modality::AModeUS ? "a_mode_us" : "envelope_rf";
}

Modality modality_from_name(const std::string& name) {
    if (name == "a_mode_us") return Modality::AModeUS;
    if (name == "envelope_rf") return Modality::EnvelopeRF;
    throw ConfigError(strf("unknown modality '%s' (expected a_mode_us or envelope_rf)", name.c_str()));
}

const char* modality_display(Modality m) {
    return m == Modality::AModeUS ? "A-mode US" : "Envelope(RF)";
}

double& RFRecording::at(int frame, int channel, int sample) {
    return samples[(static_cast<size_t>(frame) * channels + channel) * samples_per_frame + sample];
}

double RFRecording::at(int frame, int channel, int sample) const {
    return samples[(static_cast<size_t>(frame) * channels + channel) * samples_per_frame + sample];
}

void RFRecording::validate() const {
    if (channels < 1) throw DataError(strf("recording %s/%s: channels %d < 1", subject_id.c_str(), session_id.c_str(), channels));
    if (samples_per_frame < 8)
        throw DataError(strf("recording %s/%s: samples_per_frame %d < 8", subject_id.c_str(), session_id.c_str(), samples_per_frame));
    if (!(sampling_rate_hz > 2.0 * center_frequency_hz))
        throw DataError(strf("recording %s/%s: sampling_rate %g Hz violates Nyquist for center frequency %g Hz",
                             subject_id.c_str(), session_id.c_str(), sampling_rate_hz, center_frequency_hz));
    if (static_cast<size_t>(frames) * channels * samples_per_frame != samples.size())
        throw DataError(strf("recording %s/%s: sample buffer holds %zu values, expected %d*%d*%d",
                             subject_id.c_str(), session_id.c_str(), samples.size(), frames, channels, samples_per_frame));
    if (static_cast<int>(labels.size()) != frames)
        throw DataError(strf("recording %s/%s: %zu labels for %d frames", subject_id.c_str(), session_id.c_str(),
                             labels.size(), frames));
    const int num_classes = static_cast<int>(label_names.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || (num_classes > 0 && labels[i] >= num_classes))
            throw DataError(strf("recording %s/%s: frame %zu label %d outside gesture set of size %d",
                                 subject_id.c_str(), session_id.c_str(), i, labels[i], num_classes));
    }
    for (double v : samples)
        if (!std::isfinite(v))
            throw DataError(strf("recording %s/%s: non-finite sample value", subject_id.c_str(), session_id.c_str()));
}

std::vector<double> TgcConfig::resolve(int samples_per_frame) const {
    switch (kind) {
        case Kind::Unit:
            return std::vector<double>(samples_per_frame, 1.0);
        case Kind::Exponential: {
            std::vector<double> g(samples_per_frame);
            for (int i = 0; i < samples_per_frame; ++i) g[i] = std::exp(alpha * i);
            return g;
        }
        case Kind::Curve:
            if (static_cast<int>(curve.size()) != samples_per_frame)
                throw ConfigError(strf("tgc curve length %zu != samples_per_frame %d", curve.size(), samples_per_frame));
            return curve;
    }
    throw ConfigError("tgc: invalid kind");
}

BandpassSpec PreprocConfig::resolved_bandpass(double fc) const {
    if (bandpass) return *bandpass;
    return BandpassSpec{0.5 * fc, 1.5 * fc, 64};
}

void PreprocConfig::validate(const RFRecording& rec) const {
    if (trim < 0) throw ConfigError(strf("preprocess: trim %d must be >= 0", trim));
    if (rec.samples_per_frame - 2 * trim < 1)
        throw ConfigError(strf("preprocess: trim %d leaves no samples of %d", trim, rec.samples_per_frame));
    if (!(dynamic_range_db > 0.0))
        throw ConfigError(strf("preprocess: dynamic_range_db %g must be > 0", dynamic_range_db));
    const auto band = resolved_bandpass(rec.center_frequency_hz);
    if (!(band.low_hz > 0.0) || !(band.low_hz < band.high_hz) || !(band.high_hz < rec.sampling_rate_hz / 2.0))
        throw ConfigError(strf("preprocess: band (%g, %g) Hz outside (0, fs/2 = %g)", band.low_hz, band.high_hz,
                               rec.sampling_rate_hz / 2.0));
    auto curve = tgc.resolve(rec.samples_per_frame);
    for (double g : curve)
        if (!(g > 0.0)) throw ConfigError("preprocess: tgc gains must be > 0");
}

std::vector<NetworkInput> preprocess(const RFRecording& rec, const PreprocConfig& cfg) {
    rec.validate();
    cfg.validate(rec);

    const auto curve = cfg.tgc.resolve(rec.samples_per_frame);
    const auto band = cfg.resolved_bandpass(rec.center_frequency_hz);
    const int out_len = rec.samples_per_frame - 2 * cfg.trim;

    std::vector<NetworkInput> out;
    out.reserve(rec.frames);
    for (int f = 0; f < rec.frames; ++f) {
        NetworkInput item;
        item.channels = rec.channels;
        item.length = out_len;
        item.data.resize(static_cast<size_t>(rec.channels) * out_len);
        item.modality = cfg.modality;
        item.label = rec.labels[f];
        item.provenance = {rec.subject_id, rec.session_id, f};
        for (int c = 0; c < rec.channels; ++c) {
            std::vector<double> trace(rec.samples_per_frame);
            for (int s = 0; s < rec.samples_per_frame; ++s) trace[s] = rec.at(f, c, s);
            try {
                if (cfg.modality == Modality::AModeUS) {
                    trace = apply_tgc(trace, curve);
                    trace = bandpass(trace, band, rec.sampling_rate_hz);
                    trace = envelope(trace);
                    trace = log_compress(trace, cfg.dynamic_range_db);
                } else {
                    trace = envelope(trace);
                }
            } catch (const ConfigError& e) {
                throw ConfigError(strf("frame %d channel %d: %s", f, c, e.what()));
            } catch (const InputError& e) {
                throw InputError(strf("frame %d channel %d: %s", f, c, e.what()));
            }
            for (int s = 0; s < out_len; ++s) item.data[static_cast<size_t>(c) * out_len + s] = trace[s + cfg.trim];
        }
        out.push_back(std::move(item));
    }
    return out;
}

}  // namespace uspose::dsp
