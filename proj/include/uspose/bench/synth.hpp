#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "uspose/dsp/preprocess.hpp"

namespace uspose::bench {

struct Reflector {
    double delay_samples = 0.0;
    double amplitude = 1.0;
};

// Desk-scale stand-in for a wearable A-mode rig: every frame is a sum of
// Gaussian-windowed tone bursts at per-class reflector delays, the delays
// wobble sinusoidally across the frame sequence (the wrist-rotation
// nuisance), and white noise is added on top. Fully seeded.
struct SynthConfig {
    int channels = 8;
    int samples_per_frame = 1024;
    double sampling_rate_hz = 40e6;
    double center_frequency_hz = 5e6;
    int classes = 6;
    int frames_per_class = 60;
    double frame_rate_hz = 20.0;
    double burst_sigma_s = 1e-7;
    double rotation_amplitude_samples = 2.0;
    double wrist_rotation_hz = 0.5;
    double noise_std = 0.02;
    uint64_t seed = 1;
    std::string subject_id = "s01";
    std::string session_id = "ses01";
    // [class][channel] reflector lists; empty selects the built-in pattern of
    // depth-separated classes.
    std::vector<std::vector<std::vector<Reflector>>> reflectors;

    void validate() const;
    std::vector<std::vector<std::vector<Reflector>>> resolved_reflectors() const;
};

nlohmann::json synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

// Frames are interleaved round-robin over classes: label(i) = i mod classes.
// Samples are quantized through float so saved datasets round-trip exactly.
dsp::RFRecording synth_generate(const SynthConfig& cfg);

}  // namespace uspose::bench
