#include "uspose/dsp/fft.hpp"

#include <fftw3.h>

#include <mutex>
#include <unordered_map>

#include "uspose/error.hpp"

namespace uspose::dsp {
namespace {

struct PlanPair {
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;
};

// fftw_plan_* is not thread-safe; fftw_execute_dft on distinct buffers is.
std::mutex& plan_mutex() {
    static std::mutex m;
    return m;
}

PlanPair& plans_for(size_t n) {
    static std::unordered_map<size_t, PlanPair> cache;
    std::lock_guard<std::mutex> lock(plan_mutex());
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<std::complex<double>> buf(n), out(n);
    PlanPair p;
    p.forward = fftw_plan_dft_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(buf.data()),
                                 reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
    p.backward = fftw_plan_dft_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(buf.data()),
                                  reinterpret_cast<fftw_complex*>(out.data()), FFTW_BACKWARD,
                                  FFTW_ESTIMATE | FFTW_UNALIGNED);
    return cache.emplace(n, p).first->second;
}

std::vector<std::complex<double>> run(const std::vector<std::complex<double>>& in, bool forward) {
    if (in.empty()) throw InputError("fft: empty input");
    auto& plans = plans_for(in.size());
    std::vector<std::complex<double>> src = in;
    std::vector<std::complex<double>> dst(in.size());
    fftw_execute_dft(forward ? plans.forward : plans.backward,
                     reinterpret_cast<fftw_complex*>(src.data()),
                     reinterpret_cast<fftw_complex*>(dst.data()));
    return dst;
}

}  // namespace

std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& in) {
    return run(in, true);
}

std::vector<std::complex<double>> ifft(const std::vector<std::complex<double>>& in) {
    auto out = run(in, false);
    const double scale = 1.0 / static_cast<double>(in.size());
    for (auto& v : out) v *= scale;
    return out;
}

std::vector<std::complex<double>> analytic_signal(const std::vector<double>& x) {
    const size_t n = x.size();
    if (n < 2) throw InputError(strf("analytic_signal: frame length %zu < 2", n));
    std::vector<std::complex<double>> buf(n);
    for (size_t i = 0; i < n; ++i) buf[i] = {x[i], 0.0};
    auto spec = fft(buf);
    // DC (and Nyquist for even n) keep unit weight, positive bins double,
    // negative bins vanish.
    const size_t half = n / 2;
    for (size_t k = 1; k < half; ++k) spec[k] *= 2.0;
    if (n % 2 == 0) {
        for (size_t k = half + 1; k < n; ++k) spec[k] = 0.0;
    } else {
        spec[half] *= 2.0;
        for (size_t k = half + 1; k < n; ++k) spec[k] = 0.0;
    }
    return ifft(spec);
}

}  // namespace uspose::dsp
