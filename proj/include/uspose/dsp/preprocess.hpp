#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uspose/dsp/signal.hpp"

namespace uspose::dsp {

enum class Modality { AModeUS, EnvelopeRF };

const char* modality_name(Modality m);          // "a_mode_us" / "envelope_rf"
Modality modality_from_name(const std::string& name);
const char* modality_display(Modality m);       // "A-mode US" / "Envelope(RF)"

// Raw multi-channel RF frames, sample layout [frame][channel][sample].
struct RFRecording {
    int channels = 0;
    int frames = 0;
    int samples_per_frame = 0;
    double sampling_rate_hz = 0.0;
    double center_frequency_hz = 0.0;
    std::vector<double> samples;
    std::vector<int> labels;                 // one gesture class id per frame
    std::vector<std::string> label_names;    // class id -> gesture name
    std::string subject_id;
    std::string session_id;

    double& at(int frame, int channel, int sample);
    double at(int frame, int channel, int sample) const;
    void validate() const;
};

struct TgcConfig {
    enum class Kind { Unit, Exponential, Curve };
    Kind kind = Kind::Unit;
    double alpha = 0.0;            // Exponential: g[i] = e^{alpha * i}
    std::vector<double> curve;     // Curve: explicit per-sample gains

    std::vector<double> resolve(int samples_per_frame) const;
};

struct PreprocConfig {
    Modality modality = Modality::AModeUS;
    TgcConfig tgc;
    // Band defaults to [0.5, 1.5] * center frequency at order 64 when unset.
    std::optional<BandpassSpec> bandpass;
    double dynamic_range_db = 60.0;
    int trim = 2;

    BandpassSpec resolved_bandpass(double center_frequency_hz) const;
    void validate(const RFRecording& rec) const;
};

struct FrameRef {
    std::string subject_id;
    std::string session_id;
    int frame_index = 0;
};

// One preprocessed C x L frame, the unit the models consume.
struct NetworkInput {
    int channels = 0;
    int length = 0;
    std::vector<double> data;  // row-major C x L
    Modality modality = Modality::AModeUS;
    int label = 0;
    FrameRef provenance;

    double at(int channel, int sample) const { return data[static_cast<size_t>(channel) * length + sample]; }
};

// AModeUS: tgc -> bandpass -> envelope -> log_compress per channel.
// EnvelopeRF: envelope of the raw RF only. Both trim `trim` samples per end.
std::vector<NetworkInput> preprocess(const RFRecording& rec, const PreprocConfig& cfg);

}  // namespace uspose::dsp
