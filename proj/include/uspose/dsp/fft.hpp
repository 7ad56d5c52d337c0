#pragma once

#include <complex>
#include <vector>

namespace uspose::dsp {

// Complex FFT of arbitrary length (FFTW behind the scenes). Plans are cached
// per length and creation is serialized; execution is thread-safe.
std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& in);
std::vector<std::complex<double>> ifft(const std::vector<std::complex<double>>& in);

// Analytic signal x + i*H(x) via the frequency-domain construction on the
// full frame (zero negative frequencies, double positive ones).
std::vector<std::complex<double>> analytic_signal(const std::vector<double>& x);

}  // namespace uspose::dsp
