#include "uspose/dsp/signal.hpp"

#include <algorithm>
#include <cmath>

#include "uspose/dsp/fft.hpp"
#include "uspose/error.hpp"

namespace uspose::dsp {

std::vector<double> apply_tgc(const std::vector<double>& frame, const std::vector<double>& curve) {
    if (frame.size() != curve.size())
        throw ConfigError(strf("apply_tgc: frame length %zu != curve length %zu", frame.size(), curve.size()));
    for (double g : curve)
        if (!(g > 0.0)) throw ConfigError("apply_tgc: curve entries must be > 0");
    std::vector<double> out(frame.size());
    for (size_t i = 0; i < frame.size(); ++i) out[i] = frame[i] * curve[i];
    return out;
}

namespace {

double sinc(double x) {
    if (x == 0.0) return 1.0;
    return std::sin(M_PI * x) / (M_PI * x);
}

}  // namespace

std::vector<double> fir_bandpass_taps(const BandpassSpec& spec, double fs) {
    if (!(spec.low_hz > 0.0) || !(spec.high_hz > spec.low_hz) || !(spec.high_hz < fs / 2.0))
        throw ConfigError(strf("bandpass: cutoffs (%g, %g) Hz must satisfy 0 < low < high < fs/2 = %g",
                               spec.low_hz, spec.high_hz, fs / 2.0));
    if (spec.filter_order < 2 || spec.filter_order % 2 != 0)
        throw ConfigError(strf("bandpass: filter_order %d must be even and >= 2", spec.filter_order));

    const int order = spec.filter_order;
    const int taps = order + 1;
    const double f1 = spec.low_hz / fs;   // normalized cutoffs
    const double f2 = spec.high_hz / fs;
    std::vector<double> h(taps);
    for (int n = 0; n < taps; ++n) {
        double m = n - order / 2.0;
        double ideal = 2.0 * f2 * sinc(2.0 * f2 * m) - 2.0 * f1 * sinc(2.0 * f1 * m);
        double window = 0.54 - 0.46 * std::cos(2.0 * M_PI * n / order);
        h[n] = ideal * window;
    }
    return h;
}

std::vector<double> bandpass(const std::vector<double>& frame, const BandpassSpec& spec, double fs) {
    const auto taps = fir_bandpass_taps(spec, fs);
    const int n = static_cast<int>(frame.size());
    const int delay = spec.filter_order / 2;
    std::vector<double> out(frame.size(), 0.0);
    // y[i] = sum_k h[k] x[i + delay - k], zero-padded outside the frame;
    // indexing by i + delay cancels the linear-phase group delay.
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        const int center = i + delay;
        const int k_lo = std::max(0, center - (n - 1));
        const int k_hi = std::min(static_cast<int>(taps.size()) - 1, center);
        for (int k = k_lo; k <= k_hi; ++k) acc += taps[k] * frame[center - k];
        out[i] = acc;
    }
    return out;
}

std::vector<double> envelope(const std::vector<double>& frame) {
    auto a = analytic_signal(frame);
    std::vector<double> out(frame.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a[i]);
    return out;
}

std::vector<double> log_compress(const std::vector<double>& env, double dynamic_range_db) {
    if (!(dynamic_range_db > 0.0))
        throw ConfigError(strf("log_compress: dynamic_range_db %g must be > 0", dynamic_range_db));
    double peak = 0.0;
    for (double v : env) {
        if (v < 0.0) throw InputError("log_compress: envelope entries must be >= 0");
        peak = std::max(peak, v);
    }
    if (peak == 0.0) throw InputError("log_compress: all-zero envelope has no reference amplitude");
    std::vector<double> out(env.size());
    for (size_t i = 0; i < env.size(); ++i) {
        if (env[i] == 0.0) {
            out[i] = 0.0;  // -inf dB clamps to the floor
            continue;
        }
        double db = 20.0 * std::log10(env[i] / peak);
        out[i] = std::clamp(1.0 + db / dynamic_range_db, 0.0, 1.0);
    }
    return out;
}

}  // namespace uspose::dsp
