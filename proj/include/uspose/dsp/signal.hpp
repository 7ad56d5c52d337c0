#pragma once

#include <vector>

namespace uspose::dsp {

struct BandpassSpec {
    double low_hz = 0.0;
    double high_hz = 0.0;
    int filter_order = 64;  // even; taps = order + 1
};

/// Elementwise depth-dependent gain. Curve length must match the frame.
std::vector<double> apply_tgc(const std::vector<double>& frame, const std::vector<double>& curve);

// Linear-phase FIR bandpass, windowed-sinc (Hamming). The integer group
// delay of order/2 samples is compensated so the output stays aligned with
// the input; length is preserved and edge transients are accepted.
std::vector<double> fir_bandpass_taps(const BandpassSpec& spec, double sampling_rate_hz);
std::vector<double> bandpass(const std::vector<double>& frame, const BandpassSpec& spec,
                             double sampling_rate_hz);

/// Magnitude of the analytic signal; always >= |frame| pointwise.
std::vector<double> envelope(const std::vector<double>& frame);

// Normalize by the max, convert to dB, clamp at -dynamic_range_db and map
// [-dynamic_range_db, 0] affinely onto [0, 1]. The max maps to exactly 1.
std::vector<double> log_compress(const std::vector<double>& env, double dynamic_range_db);

}  // namespace uspose::dsp
